//! Dominator trees via the Cooper–Harvey–Kennedy iterative algorithm.

/// Immediate dominators of every node reachable from `root`.
///
/// `succs` gives the forward edges of the graph being analysed; for
/// post-dominators pass the reversed graph. The root's entry is `Some(root)`;
/// unreachable nodes are `None`.
pub fn immediate_dominators(n: usize, root: usize, succs: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut preds = vec![Vec::new(); n];
    for (a, ss) in succs.iter().enumerate() {
        for &b in ss {
            preds[b].push(a);
        }
    }
    // Reverse post-order from the root.
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut stack = vec![(root, 0usize)];
    seen[root] = true;
    while let Some((v, i)) = stack.pop() {
        if i < succs[v].len() {
            stack.push((v, i + 1));
            let w = succs[v][i];
            if !seen[w] {
                seen[w] = true;
                stack.push((w, 0));
            }
        } else {
            order.push(v);
        }
    }
    order.reverse();
    let mut rpo_index = vec![usize::MAX; n];
    for (i, &v) in order.iter().enumerate() {
        rpo_index[v] = i;
    }
    let mut idom: Vec<Option<usize>> = vec![None; n];
    idom[root] = Some(root);
    let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
        while a != b {
            while rpo_index[a] > rpo_index[b] {
                a = idom[a].expect("processed");
            }
            while rpo_index[b] > rpo_index[a] {
                b = idom[b].expect("processed");
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &v in order.iter().skip(1) {
            let mut new_idom: Option<usize> = None;
            for &p in &preds[v] {
                if idom[p].is_none() {
                    continue;
                }
                new_idom = Some(match new_idom {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            if new_idom.is_some() && idom[v] != new_idom {
                idom[v] = new_idom;
                changed = true;
            }
        }
    }
    idom
}

/// A dominator (or post-dominator) tree with constant-time ancestor queries.
#[derive(Clone, Debug)]
pub struct DomTree {
    pub root: usize,
    /// Immediate dominator; `None` for the root and for nodes outside the tree.
    pub idom: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    tin: Vec<usize>,
    tout: Vec<usize>,
}

impl DomTree {
    pub fn new(n: usize, root: usize, succs: &[Vec<usize>]) -> DomTree {
        let raw = immediate_dominators(n, root, succs);
        let idom: Vec<Option<usize>> = raw
            .iter()
            .enumerate()
            .map(|(v, d)| if v == root { None } else { *d })
            .collect();
        let mut children = vec![Vec::new(); n];
        for (v, d) in idom.iter().enumerate() {
            if let Some(d) = d {
                children[*d].push(v);
            }
        }
        let mut tin = vec![usize::MAX; n];
        let mut tout = vec![usize::MAX; n];
        let mut clock = 0;
        let mut stack = vec![(root, 0usize)];
        tin[root] = clock;
        clock += 1;
        while let Some((v, i)) = stack.pop() {
            if i < children[v].len() {
                stack.push((v, i + 1));
                let c = children[v][i];
                tin[c] = clock;
                clock += 1;
                stack.push((c, 0));
            } else {
                tout[v] = clock;
                clock += 1;
            }
        }
        DomTree {
            root,
            idom,
            children,
            tin,
            tout,
        }
    }

    pub fn contains(&self, v: usize) -> bool {
        self.tin[v] != usize::MAX
    }

    /// `a` dominates `b` (reflexive).
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        self.contains(a) && self.contains(b) && self.tin[a] <= self.tin[b] && self.tout[b] <= self.tout[a]
    }

    pub fn strictly_dominates(&self, a: usize, b: usize) -> bool {
        a != b && self.dominates(a, b)
    }

    /// Post-order of the subtree rooted at `v`.
    pub fn post_order_from(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![(v, 0usize)];
        while let Some((x, i)) = stack.pop() {
            if i < self.children[x].len() {
                stack.push((x, i + 1));
                stack.push((self.children[x][i], 0));
            } else {
                out.push(x);
            }
        }
        out
    }

    /// Ancestors of `v` from its immediate dominator upward.
    pub fn ancestors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(self.idom[v], move |&x| self.idom[x])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diamond_join_idom_is_branch() {
        // 0 -> 1,2 -> 3
        let succs = vec![vec![1, 2], vec![3], vec![3], vec![]];
        let t = DomTree::new(4, 0, &succs);
        assert_eq!(t.idom[3], Some(0));
        assert!(t.dominates(0, 3));
        assert!(!t.dominates(1, 3));
    }

    #[test]
    fn loop_header_dominates_body() {
        // 0 -> 1 -> 2 -> 1, 1 -> 3
        let succs = vec![vec![1], vec![2, 3], vec![1], vec![]];
        let t = DomTree::new(4, 0, &succs);
        assert_eq!(t.idom[2], Some(1));
        assert_eq!(t.idom[3], Some(1));
        assert_eq!(t.post_order_from(0).last(), Some(&0));
    }

    #[test]
    fn unreachable_nodes_are_outside() {
        let succs = vec![vec![1], vec![], vec![1]];
        let t = DomTree::new(3, 0, &succs);
        assert!(!t.contains(2));
        assert!(!t.dominates(2, 1));
    }
}
