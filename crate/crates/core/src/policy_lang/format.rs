use std::fmt::Write;

use crate::ast::*;

pub(crate) fn format(program: &PolicyProgram) -> String {
    let mut out = String::new();
    for stmt in &program.statements {
        match stmt {
            Statement::Fact(a) => {
                let _ = writeln!(out, "{a}.");
            }
            Statement::Rule(r) => {
                let _ = writeln!(out, "{r}");
            }
            Statement::Directive(d) => {
                let _ = writeln!(out, "{}", directive(d));
            }
        }
    }
    out
}

pub(crate) fn directive(d: &Directive) -> String {
    match d {
        Directive::View { name, parent } => format!("#view {name} sub_view_of {parent}."),
        Directive::Temporal { name, start, end } => format!(
            "#context {name} temporal {} {}.",
            format_timestamp(start),
            format_timestamp(end)
        ),
        Directive::DefaultPriority(n) => format!("#priority default {n}."),
        Directive::NextId(n) => format!("#next-id {n}."),
        Directive::Event(e) => event(e),
    }
}

fn event(e: &Event) -> String {
    let mut out = String::new();
    match e {
        Event::Delegate { kind, grantor, view, attrs, at, id } => {
            let name = match kind {
                DelegateKind::Delegate => "delegate",
                DelegateKind::Transfer => "transfer",
            };
            let _ = write!(out, "#{name} {grantor} {view}");
            match attrs {
                ObjectAttrs::License { grantee, privilege, target, context } => {
                    let _ = write!(
                        out,
                        " grantee={grantee} privilege={privilege} target={target} context={context}"
                    );
                }
                ObjectAttrs::Role { assignee, assignment } => {
                    let _ = write!(out, " assignee={assignee} assignment={assignment}");
                }
            }
            let _ = write!(out, " at={}", format_timestamp(at));
            if let Some(id) = id {
                let _ = write!(out, " id={id}");
            }
        }
        Event::GrantOption { grantor, grantee, target, level, context, at, id } => {
            let _ = write!(
                out,
                "#grant-option {grantor} grantee={grantee} target={target} level={level} context={context} at={}",
                format_timestamp(at)
            );
            if let Some(id) = id {
                let _ = write!(out, " id={id}");
            }
        }
        Event::Revoke { actor, object, at } => {
            let _ = write!(out, "#revoke {actor} {object} at={}", format_timestamp(at));
        }
    }
    out.push('.');
    out
}
