//! Bipartite variable/clause incidence of a CNF formula.
//!
//! Every literal occurrence is an edge, identified by its clause and position.
//! Edges are also numbered densely in clause order so message arrays can be
//! plain vectors.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::formula::{Clause, CnfFormula, Literal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId {
    pub clause: u32,
    pub pos: u32,
}

#[derive(Clone, Debug)]
pub struct FactorGraph {
    n: usize,
    clause_start: Vec<usize>,
    edge_var: Vec<u32>,
    edge_sign: Vec<i8>,
    edge_clause: Vec<u32>,
    // Per variable: edges with sign +1 then edges with sign −1.
    var_start: Vec<usize>,
    var_split: Vec<usize>,
    var_edges: Vec<usize>,
}

impl FactorGraph {
    pub fn build(f: &CnfFormula) -> Self {
        let n = f.num_vars();
        let mut clause_start = Vec::with_capacity(f.num_clauses() + 1);
        let mut edge_var = Vec::new();
        let mut edge_sign = Vec::new();
        let mut edge_clause = Vec::new();
        clause_start.push(0);
        for (ci, c) in f.clauses().iter().enumerate() {
            for l in c.literals() {
                edge_var.push(l.var());
                edge_sign.push(l.sign());
                edge_clause.push(ci as u32);
            }
            clause_start.push(edge_var.len());
        }
        let mut pos_deg = vec![0usize; n + 1];
        let mut neg_deg = vec![0usize; n + 1];
        for (e, &v) in edge_var.iter().enumerate() {
            if edge_sign[e] > 0 {
                pos_deg[v as usize] += 1;
            } else {
                neg_deg[v as usize] += 1;
            }
        }
        let mut var_start = vec![0usize; n + 2];
        let mut var_split = vec![0usize; n + 1];
        for v in 1..=n {
            var_split[v] = var_start[v] + pos_deg[v];
            var_start[v + 1] = var_split[v] + neg_deg[v];
        }
        var_start[0] = 0;
        let mut fill_pos = var_start.clone();
        let mut fill_neg = var_split.clone();
        let mut var_edges = vec![0usize; edge_var.len()];
        for (e, &v) in edge_var.iter().enumerate() {
            let v = v as usize;
            if edge_sign[e] > 0 {
                var_edges[fill_pos[v]] = e;
                fill_pos[v] += 1;
            } else {
                var_edges[fill_neg[v]] = e;
                fill_neg[v] += 1;
            }
        }
        FactorGraph { n, clause_start, edge_var, edge_sign, edge_clause, var_start, var_split, var_edges }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_clauses(&self) -> usize {
        self.clause_start.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.edge_var.len()
    }

    pub fn edge_index(&self, id: EdgeId) -> usize {
        let e = self.clause_start[id.clause as usize] + id.pos as usize;
        assert!(e < self.clause_start[id.clause as usize + 1], "position out of range");
        e
    }

    pub fn edge_id(&self, e: usize) -> EdgeId {
        let c = self.edge_clause[e];
        EdgeId { clause: c, pos: (e - self.clause_start[c as usize]) as u32 }
    }

    pub fn edge_var(&self, e: usize) -> u32 {
        self.edge_var[e]
    }

    /// `sign(x, a)` of the occurrence carried by edge `e`.
    pub fn edge_sign(&self, e: usize) -> i8 {
        self.edge_sign[e]
    }

    pub fn edge_clause(&self, e: usize) -> usize {
        self.edge_clause[e] as usize
    }

    /// Edge indices of clause `c` in position order.
    pub fn clause_edges(&self, c: usize) -> std::ops::Range<usize> {
        self.clause_start[c]..self.clause_start[c + 1]
    }

    /// `|N(b)|`, counting repeated occurrences.
    pub fn clause_len(&self, c: usize) -> usize {
        self.clause_start[c + 1] - self.clause_start[c]
    }

    /// `N(b)` as `(var, sign)` pairs in clause order.
    pub fn clause_neighbors(&self, c: usize) -> impl Iterator<Item = (u32, i8)> + '_ {
        self.clause_edges(c).map(move |e| (self.edge_var[e], self.edge_sign[e]))
    }

    /// Edges of variable `x` (numbered from 1), positive occurrences first.
    pub fn var_edges(&self, x: u32) -> &[usize] {
        let x = x as usize;
        &self.var_edges[self.var_start[x]..self.var_start[x + 1]]
    }

    /// Edges of `x` whose literal has sign `zeta`, in increasing edge order.
    pub fn var_edges_signed(&self, x: u32, zeta: i8) -> &[usize] {
        let x = x as usize;
        if zeta > 0 {
            &self.var_edges[self.var_start[x]..self.var_split[x]]
        } else {
            &self.var_edges[self.var_split[x]..self.var_start[x + 1]]
        }
    }

    pub fn degree(&self, x: u32) -> usize {
        self.var_edges(x).len()
    }

    /// Clause indices of `N(x, zeta)`, one entry per occurrence.
    pub fn var_clauses_signed(&self, x: u32, zeta: i8) -> impl Iterator<Item = usize> + '_ {
        self.var_edges_signed(x, zeta).iter().map(move |&e| self.edge_clause(e))
    }

    /// Number of clauses of each length.
    pub fn clause_length_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for c in 0..self.num_clauses() {
            *h.entry(self.clause_len(c)).or_insert(0) += 1;
        }
        h
    }

    /// Rebuilds the clause list from the edges.
    pub fn to_formula(&self) -> CnfFormula {
        let clauses = (0..self.num_clauses())
            .map(|c| {
                Clause::new(
                    self.clause_neighbors(c)
                        .map(|(v, s)| Literal::new(v, s > 0))
                        .collect(),
                )
            })
            .collect();
        CnfFormula::new(self.n, clauses)
    }

    /// One line per edge: `clause pos var sign`.
    pub fn edge_list(&self) -> String {
        let mut s = String::new();
        for e in 0..self.num_edges() {
            let id = self.edge_id(e);
            writeln!(s, "{} {} {} {}", id.clause, id.pos, self.edge_var[e], self.edge_sign[e]).unwrap();
        }
        s
    }
}
