//! Canonical text output. Parenthesization follows the parser's precedence
//! levels so that printed terms re-parse to the same tree.

use std::fmt::Write;

use crate::ast::{CandidateSet, FunctionDecl, Program, Rule, Term};

const INDENT: &str = "  ";

fn prec(t: &Term) -> u8 {
    match t {
        Term::Or(..) => 1,
        Term::And(..) => 2,
        Term::Not(inner) if !matches!(**inner, Term::Eq(..)) => 3,
        Term::Not(_) | Term::Eq(..) | Term::In(..) | Term::EncIn(..) => 4,
        _ => 5,
    }
}

fn term_at(t: &Term, min: u8, out: &mut String) {
    if prec(t) < min {
        out.push('(');
        write_term(t, out);
        out.push(')');
    } else {
        write_term(t, out);
    }
}

fn write_list<T>(items: &[T], out: &mut String, mut each: impl FnMut(&T, &mut String)) {
    for (i, x) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        each(x, out);
    }
}

fn write_term(t: &Term, out: &mut String) {
    match t {
        Term::Const(v) => {
            let _ = write!(out, "{v}");
        }
        Term::Var(x) => out.push_str(x),
        Term::App(f, args) => {
            out.push_str(f);
            if !args.is_empty() {
                out.push('(');
                write_list(args, out, |a, o| term_at(a, 0, o));
                out.push(')');
            }
        }
        Term::Not(inner) => match &**inner {
            Term::Eq(a, b) => {
                term_at(a, 5, out);
                out.push_str(" != ");
                term_at(b, 5, out);
            }
            other => {
                out.push_str("not ");
                term_at(other, 3, out);
            }
        },
        Term::And(a, b) => {
            term_at(a, 2, out);
            out.push_str(" and ");
            term_at(b, 3, out);
        }
        Term::Or(a, b) => {
            term_at(a, 1, out);
            out.push_str(" or ");
            term_at(b, 2, out);
        }
        Term::Eq(a, b) => {
            term_at(a, 5, out);
            out.push_str(" = ");
            term_at(b, 5, out);
        }
        Term::In(a, set) => {
            term_at(a, 5, out);
            out.push_str(" in {");
            write_list(set, out, |v, o| {
                let _ = write!(o, "{v}");
            });
            out.push('}');
        }
        Term::EncIn(a, table) => {
            term_at(a, 5, out);
            out.push_str(" in enc {");
            write_list(table, out, |(k, rs), o| {
                let _ = write!(o, "{k}: [");
                write_list(rs, o, |r, o| {
                    let _ = write!(o, "{r}");
                });
                o.push(']');
            });
            out.push('}');
        }
        Term::Ite(c, a, b) => {
            out.push_str("ite(");
            term_at(c, 0, out);
            out.push_str(", ");
            term_at(a, 0, out);
            out.push_str(", ");
            term_at(b, 0, out);
            out.push(')');
        }
    }
}

/// Prints a term in the DSL's formula syntax.
pub fn print_term(t: &Term) -> String {
    let mut out = String::new();
    write_term(t, &mut out);
    out
}

fn line(out: &mut String, depth: usize, text: &str) {
    for _ in 0..depth {
        out.push_str(INDENT);
    }
    out.push_str(text);
    out.push('\n');
}

fn write_rules(rules: &[Rule], depth: usize, out: &mut String) {
    for r in rules {
        write_rule(r, depth, out);
    }
}

fn write_rule(r: &Rule, depth: usize, out: &mut String) {
    match r {
        Rule::Update { func, args, value } => {
            let lhs = print_term(&Term::App(func.clone(), args.clone()));
            line(out, depth, &format!("{lhs} := {}", print_term(value)));
        }
        Rule::Cond {
            guard,
            then_rules,
            else_rules,
        } => {
            line(out, depth, &format!("if {} then", print_term(guard)));
            write_rules(then_rules, depth + 1, out);
            if let Some(e) = else_rules {
                line(out, depth, "else");
                write_rules(e, depth + 1, out);
            }
            line(out, depth, "endif");
        }
        Rule::Par(rs) => {
            line(out, depth, "par");
            write_rules(rs, depth + 1, out);
            line(out, depth, "endpar");
        }
        Rule::Choose { var, set, body, .. } => {
            let set = match set {
                CandidateSet::Values(vs) => {
                    let shown: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
                    format!("{{{}}}", shown.join(", "))
                }
                CandidateSet::Sort { sort, pred: None } => sort.to_string(),
                CandidateSet::Sort {
                    sort,
                    pred: Some(p),
                } => format!("{sort} with {}", print_term(p)),
            };
            line(out, depth, &format!("choose {var} in {set} do"));
            write_rules(body, depth + 1, out);
            line(out, depth, "endchoose");
        }
        Rule::Let { var, value, body } => {
            line(out, depth, &format!("let {var} = {} in", print_term(value)));
            write_rules(body, depth + 1, out);
            line(out, depth, "endlet");
        }
        Rule::Call { rule, args } => {
            let shown: Vec<String> = args.iter().map(print_term).collect();
            line(out, depth, &format!("{rule}({})", shown.join(", ")));
        }
        Rule::ChooseCtl { challenge } => {
            line(out, depth, &format!("choosectl challenge {challenge}"))
        }
    }
}

/// Prints a rule as an indented block.
pub fn print_rule(r: &Rule) -> String {
    let mut out = String::new();
    write_rule(r, 0, &mut out);
    out
}

fn function_line(f: &FunctionDecl) -> String {
    let mut s = format!("{} {}", f.mode, f.name);
    if !f.arg_sorts.is_empty() {
        let sorts: Vec<String> = f.arg_sorts.iter().map(|s| s.to_string()).collect();
        let _ = write!(s, " : {} ->", sorts.join(", "));
    }
    let _ = write!(s, " {}", f.result);
    if let Some(init) = &f.init {
        let mut values = init.values();
        let first = values.next();
        if let Some(v) = first.filter(|v| values.all(|w| w == *v)) {
            let _ = write!(s, " init {v}");
        } else {
            let entries: Vec<String> = init
                .iter()
                .map(|(k, v)| {
                    let key: Vec<String> = k.iter().map(|a| a.to_string()).collect();
                    if key.len() == 1 {
                        format!("{} -> {v}", key[0])
                    } else {
                        format!("({}) -> {v}", key.join(", "))
                    }
                })
                .collect();
            let _ = write!(s, " init {{ {} }}", entries.join(", "));
        }
    }
    s
}

/// Canonical text of a program.
pub fn pretty_print(p: &Program) -> String {
    let mut out = String::new();
    line(&mut out, 0, &format!("asm {}", p.name));
    out.push('\n');
    for e in &p.enums {
        let lits: Vec<&str> = e.literals.iter().map(|l| &**l).collect();
        line(
            &mut out,
            0,
            &format!("enum {} = {{ {} }}", e.name, lits.join(", ")),
        );
    }
    if !p.enums.is_empty() {
        out.push('\n');
    }
    for f in &p.functions {
        line(&mut out, 0, &function_line(f));
    }
    out.push('\n');
    line(&mut out, 0, &format!("ctlstate {}", p.ctl));
    line(
        &mut out,
        0,
        &format!("unsafe {}", print_term(&p.unsafe_formula)),
    );
    for a in &p.assumptions {
        let target = Term::App(
            a.target.func.clone(),
            a.target.args.iter().cloned().map(Term::Const).collect(),
        );
        line(
            &mut out,
            0,
            &format!("assume {} = {}", print_term(&target), print_term(&a.value)),
        );
    }
    if let Some(prot) = &p.protection {
        line(
            &mut out,
            0,
            &format!(
                "protected {} plain {} responses {} inittoken {}",
                p.ctl, prot.plain_sort, prot.response_bits, prot.init_token
            ),
        );
        line(
            &mut out,
            0,
            &format!(
                "condx {} : {}",
                prot.condx.var,
                print_term(&prot.condx.formula)
            ),
        );
    }
    for m in &p.main_rules {
        out.push('\n');
        line(&mut out, 0, &format!("rule {} :", m.name));
        write_rule(&m.body, 1, &mut out);
    }
    for r in &p.named_rules {
        out.push('\n');
        let params: Vec<String> = r.params.iter().map(|(n, s)| format!("{n} : {s}")).collect();
        line(
            &mut out,
            0,
            &format!("rule {}({}) :", r.name, params.join(", ")),
        );
        write_rules(&r.body, 1, &mut out);
    }
    out
}
