use std::collections::BTreeSet;

use thiserror::Error;

use super::{Location, Mode, Name, Program, Rule, Term};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterestError {
    #[error(
        "location `{func}` is read with an argument that depends on other state; widen it manually"
    )]
    NonGroundGuardLocation { func: Name },
}

/// Every ground location read or written inside a conditional rule reachable
/// from the main rules, plus every location the violation predicate reads. Applications
/// whose arguments are not constants are expanded over the argument sorts,
/// which is only permitted when the arguments depend on nothing but the
/// control state and bound variables.
pub fn locations_of_interest(program: &Program) -> Result<BTreeSet<Location>, InterestError> {
    collect(program, false)
}

/// Like [`locations_of_interest`] but also counts rules outside conditionals.
pub fn locations_touched(program: &Program) -> Result<BTreeSet<Location>, InterestError> {
    collect(program, true)
}

fn collect(program: &Program, everywhere: bool) -> Result<BTreeSet<Location>, InterestError> {
    let mut out = BTreeSet::new();
    let mut visited_rules = BTreeSet::new();
    for main in &program.main_rules {
        collect_rule(
            program,
            &main.body,
            everywhere,
            &mut out,
            &mut visited_rules,
        )?;
    }
    collect_term(program, &program.unsafe_formula, &mut out)?;
    for a in &program.assumptions {
        out.insert(a.target.clone());
        collect_term(program, &a.value, &mut out)?;
    }
    Ok(out)
}

fn collect_rule(
    program: &Program,
    rule: &Rule,
    inside_cond: bool,
    out: &mut BTreeSet<Location>,
    visited: &mut BTreeSet<(Name, bool)>,
) -> Result<(), InterestError> {
    let inside = inside_cond || matches!(rule, Rule::Cond { .. });
    if inside {
        for t in rule.terms() {
            collect_term(program, t, out)?;
        }
    }
    match rule {
        Rule::Update { func, args, .. } if inside => add_application(program, func, args, out)?,
        Rule::ChooseCtl { .. } if inside => {
            out.insert(Location::nullary(program.ctl.clone()));
        }
        Rule::Call { rule: callee, .. } if visited.insert((callee.clone(), inside)) => {
            if let Some(nr) = program.named_rule(callee) {
                for r in &nr.body {
                    collect_rule(program, r, inside, out, visited)?;
                }
            }
        }
        _ => {}
    }
    for child in rule.children() {
        collect_rule(program, child, inside, out, visited)?;
    }
    Ok(())
}

fn collect_term(
    program: &Program,
    term: &Term,
    out: &mut BTreeSet<Location>,
) -> Result<(), InterestError> {
    let mut result = Ok(());
    term.visit(&mut |t| {
        if let (Ok(()), Term::App(f, args)) = (&result, t) {
            result = add_application(program, f, args, out);
        }
    });
    result
}

fn add_application(
    program: &Program,
    func: &Name,
    args: &[Term],
    out: &mut BTreeSet<Location>,
) -> Result<(), InterestError> {
    let Some(decl) = program.function(func) else {
        return Ok(());
    };
    let consts: Option<Vec<_>> = args
        .iter()
        .map(|a| match a {
            Term::Const(v) => Some(v.clone()),
            _ => None,
        })
        .collect();
    if let Some(vals) = consts {
        out.insert(Location::new(func.clone(), vals));
        return Ok(());
    }
    let admissible = args.iter().all(|a| {
        let mut ok = true;
        a.visit(&mut |t| {
            if let Term::App(g, _) = t {
                let reads_ctl = *g == program.ctl;
                let is_static = program
                    .function(g)
                    .map(|d| d.mode == Mode::Static)
                    .unwrap_or(false);
                ok &= reads_ctl || is_static;
            }
        });
        ok
    });
    if !admissible {
        return Err(InterestError::NonGroundGuardLocation { func: func.clone() });
    }
    out.extend(program.locations_of(decl));
    Ok(())
}
