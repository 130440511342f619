//! Graphviz rendering of a CFG and its region nesting.

use std::fmt::Write;

use super::{Cfg, Item, RegionId};
use crate::frontend::ast::stmt_index;
use crate::frontend::TypedProgram;

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\l")
}

pub fn render(tp: &TypedProgram, cfg: &Cfg) -> String {
    let stmts = stmt_index(&tp.program);
    let label_of = |item: &Item| -> String {
        match item {
            Item::Stmt(s) => tp.program.text(stmts[s].span).to_string(),
            Item::Cond(s) => {
                let text = tp.program.text(stmts[s].span);
                format!("cond: {}", text.lines().next().unwrap_or("").trim_end_matches('{').trim())
            }
            Item::Lu(l) => {
                let p = cfg.lu_points[*l];
                let m = &tp.res.mutex_exprs[p.mutex];
                let text = tp.program.text(m.call_span);
                if p.synthetic {
                    format!("deferred {text}")
                } else {
                    text.to_string()
                }
            }
            Item::DeferredCall(s) => format!("deferred: {}", tp.program.text(stmts[s].span)),
        }
    };
    let mut out = String::new();
    let name = tp.body_name(cfg.body);
    let _ = writeln!(out, "digraph \"{}\" {{", escape(&name));
    let _ = writeln!(out, "  node [shape=box fontname=monospace];");
    emit_region(tp, cfg, 0, &mut out, &label_of, 1);
    for b in cfg.live_blocks() {
        for s in &cfg.blocks[b].succs {
            let _ = writeln!(out, "  b{b} -> b{s};");
        }
    }
    out.push_str("}\n");
    out
}

fn emit_region(
    tp: &TypedProgram,
    cfg: &Cfg,
    r: RegionId,
    out: &mut String,
    label_of: &dyn Fn(&Item) -> String,
    indent: usize,
) {
    let pad = "  ".repeat(indent);
    let reg = &cfg.regions[r];
    let _ = writeln!(out, "{pad}subgraph cluster_r{r} {{");
    let _ = writeln!(out, "{pad}  label=\"{:?} r{r}\";", reg.kind);
    let in_child: std::collections::BTreeSet<usize> = reg
        .children
        .iter()
        .flat_map(|c| cfg.regions[*c].members.iter().copied())
        .collect();
    for &b in &reg.members {
        if in_child.contains(&b) {
            continue;
        }
        let mut label = format!("b{b}");
        if b == cfg.entry {
            label.push_str(" (entry)");
        }
        if b == cfg.exit {
            label.push_str(" (exit)");
        }
        label.push('\n');
        for item in &cfg.blocks[b].items {
            label.push_str(&label_of(item));
            label.push('\n');
        }
        let _ = writeln!(out, "{pad}  b{b} [label=\"{}\"];", escape(&label));
    }
    for &c in &reg.children {
        emit_region(tp, cfg, c, out, label_of, indent + 1);
    }
    let _ = writeln!(out, "{pad}}}");
}

#[cfg(test)]
mod tests {
    use crate::cfg::lower;
    use crate::frontend::load;
    use crate::frontend::resolve::BodyId;

    #[test]
    fn renders_clusters_and_edges() {
        let tp = load(include_str!("../../fixtures/figure5.mgo")).unwrap();
        let c = lower(&tp, BodyId::Func(0));
        let dot = super::render(&tp, &c);
        assert!(dot.starts_with("digraph \"main.main\""));
        assert!(dot.contains("subgraph cluster_r0"));
        assert!(dot.contains("a.Lock()"));
        assert!(dot.contains("->"));
    }
}
