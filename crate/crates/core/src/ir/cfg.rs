use super::{Function, TermKind};

/// Block-level control-flow graph with dominator and post-dominator trees.
#[derive(Clone, Debug)]
pub struct Cfg {
    pub succs: Vec<Vec<usize>>,
    pub preds: Vec<Vec<usize>>,
    /// Blocks reachable from the entry, in reverse postorder.
    pub rpo: Vec<usize>,
    pub reachable: Vec<bool>,
    /// Immediate dominator; `idom[entry] == entry`, `None` for unreachable blocks.
    pub idom: Vec<Option<usize>>,
    /// Immediate post-dominator; `None` means the virtual exit.
    pub ipdom: Vec<Option<usize>>,
}

impl Cfg {
    pub fn new(f: &Function) -> Cfg {
        let n = f.blocks.len();
        let mut succs = vec![Vec::new(); n];
        let mut preds = vec![Vec::new(); n];
        for (i, b) in f.blocks.iter().enumerate() {
            for t in b.term.targets() {
                if let Some(j) = f.block_index(t) {
                    if !succs[i].contains(&j) {
                        succs[i].push(j);
                        preds[j].push(i);
                    }
                }
            }
        }
        let rpo = reverse_postorder(&succs, 0, n);
        let mut reachable = vec![false; n];
        for &b in &rpo {
            reachable[b] = true;
        }
        let idom = dominators(&succs, &preds, &rpo, n);

        // Post-dominators: dominators of the reversed graph rooted at a
        // virtual exit node `n` that every returning block flows to.
        let mut rsuccs = vec![Vec::new(); n + 1];
        let mut rpreds = vec![Vec::new(); n + 1];
        for (i, b) in f.blocks.iter().enumerate() {
            if !reachable[i] {
                continue;
            }
            if matches!(b.term.kind, TermKind::Return(_)) {
                rsuccs[n].push(i);
                rpreds[i].push(n);
            }
            for &j in &succs[i] {
                rsuccs[j].push(i);
                rpreds[i].push(j);
            }
        }
        let rrpo = reverse_postorder(&rsuccs, n, n + 1);
        let pd = dominators(&rsuccs, &rpreds, &rrpo, n + 1);
        let ipdom = (0..n).map(|b| pd[b].filter(|&d| d != n)).collect();

        Cfg { succs, preds, rpo, reachable, idom, ipdom }
    }

    pub fn len(&self) -> usize {
        self.succs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succs.is_empty()
    }

    /// Whether `a` dominates `b` (reflexive).
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        if !self.reachable[b] {
            return false;
        }
        let mut x = b;
        loop {
            if x == a {
                return true;
            }
            match self.idom[x] {
                Some(p) if p != x => x = p,
                _ => return false,
            }
        }
    }

    /// Whether `a` post-dominates `b` (reflexive).
    pub fn post_dominates(&self, a: usize, b: usize) -> bool {
        let mut x = Some(b);
        while let Some(y) = x {
            if y == a {
                return true;
            }
            x = self.ipdom[y];
        }
        false
    }

    /// Edges `(latch, header)` whose target dominates the source.
    pub fn back_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &b in &self.rpo {
            for &s in &self.succs[b] {
                if self.dominates(s, b) {
                    out.push((b, s));
                }
            }
        }
        out
    }

    /// Retreating edges in a DFS that are not back edges; non-empty iff irreducible.
    pub fn irreducible_edges(&self) -> Vec<(usize, usize)> {
        let mut pos = vec![usize::MAX; self.len()];
        for (i, &b) in self.rpo.iter().enumerate() {
            pos[b] = i;
        }
        let mut out = Vec::new();
        for &b in &self.rpo {
            for &s in &self.succs[b] {
                if pos[s] <= pos[b] && !self.dominates(s, b) {
                    out.push((b, s));
                }
            }
        }
        out
    }
}

fn reverse_postorder(succs: &[Vec<usize>], root: usize, n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut seen = vec![false; n];
    let mut post = Vec::with_capacity(n);
    let mut stack = vec![(root, 0usize)];
    seen[root] = true;
    while let Some(&mut (b, ref mut k)) = stack.last_mut() {
        if *k < succs[b].len() {
            let s = succs[b][*k];
            *k += 1;
            if !seen[s] {
                seen[s] = true;
                stack.push((s, 0));
            }
        } else {
            post.push(b);
            stack.pop();
        }
    }
    post.reverse();
    post
}

/// Iterative dominator computation (Cooper, Harvey, Kennedy).
fn dominators(_succs: &[Vec<usize>], preds: &[Vec<usize>], rpo: &[usize], n: usize) -> Vec<Option<usize>> {
    let mut idom: Vec<Option<usize>> = vec![None; n];
    let Some(&root) = rpo.first() else {
        return idom;
    };
    let mut order = vec![usize::MAX; n];
    for (i, &b) in rpo.iter().enumerate() {
        order[b] = i;
    }
    idom[root] = Some(root);
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new: Option<usize> = None;
            for &p in &preds[b] {
                if idom[p].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(q) => intersect(&idom, &order, p, q),
                });
            }
            if new.is_some() && idom[b] != new {
                idom[b] = new;
                changed = true;
            }
        }
    }
    idom
}

fn intersect(idom: &[Option<usize>], order: &[usize], mut a: usize, mut b: usize) -> usize {
    while a != b {
        while order[a] > order[b] {
            a = idom[a].unwrap();
        }
        while order[b] > order[a] {
            b = idom[b].unwrap();
        }
    }
    a
}
