//! Recorded controller forward pass shared by sampling, auditing and updates.

use super::params::{PolicyParams, Weights, LAYER_FEATURES};
use crate::arch::{LayerKind, LayerSpec};
use crate::error::Result;
use crate::tensor::lstm::LstmNodes;
use crate::tensor::{Array, NodeId, Real, Tape};

/// Fixed features of one layer: one-hot kind, log2(units)/8, kernel/3 and a
/// sentinel flag used only for the empty-network row.
pub(crate) fn layer_features(spec: Option<&LayerSpec>) -> [Real; LAYER_FEATURES] {
    let mut f = [0.0; LAYER_FEATURES];
    match spec {
        Some(s) => {
            f[s.kind.index()] = 1.0;
            f[3] = (s.units as Real).log2() / 8.0;
            f[4] = s.kernel().map_or(0.0, |k| k as Real / 3.0);
        }
        None => f[5] = 1.0,
    }
    f
}

/// Normalised distribution over one head's options.
#[derive(Clone, Debug)]
pub(crate) struct Dist {
    sigmoids: Vec<Option<NodeId>>,
    pub probs: Vec<Real>,
    /// Every unmasked sigmoid underflowed to zero; sampling is uniform.
    pub degenerate: bool,
}

impl Dist {
    pub fn is_empty(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0)
    }
}

pub(crate) struct Graph {
    pub tape: Tape,
    pub p: Weights<NodeId>,
    /// Encoder rows `[fwd_t, bwd_t]`.
    pub rows: Vec<NodeId>,
    /// `[fwd_last, bwd_first]`
    pub summary: NodeId,
    deep_hidden: Option<NodeId>,
}

impl Graph {
    pub fn new(params: &PolicyParams, state: &[LayerSpec]) -> Result<Self> {
        let mut g = Graph::bare(params);
        let emb = g.embed(state)?;
        g.encode(&emb)?;
        Ok(g)
    }

    /// Parameter leaves only; no layers embedded yet.
    pub fn bare(params: &PolicyParams) -> Self {
        let mut tape = Tape::new();
        let p = params.map(|a| tape.leaf(a.clone()));
        Graph {
            tape,
            p,
            rows: vec![],
            summary: NodeId::default(),
            deep_hidden: None,
        }
    }

    pub fn embed(&mut self, state: &[LayerSpec]) -> Result<Vec<NodeId>> {
        let feats: Vec<[Real; LAYER_FEATURES]> = if state.is_empty() {
            vec![layer_features(None)]
        } else {
            state.iter().map(|s| layer_features(Some(s))).collect()
        };
        feats
            .into_iter()
            .map(|f| {
                let x = self.tape.leaf(Array::vector(f.to_vec()));
                self.tape.vecmat(x, self.p.embed)
            })
            .collect()
    }

    pub fn encode(&mut self, emb: &[NodeId]) -> Result<()> {
        let h = self.tape.value(self.p.fwd_wh).shape()[0];
        let fwd = LstmNodes {
            wx: self.p.fwd_wx,
            wh: self.p.fwd_wh,
            b: self.p.fwd_b,
            hidden: h,
        };
        let bwd = LstmNodes {
            wx: self.p.bwd_wx,
            wh: self.p.bwd_wh,
            b: self.p.bwd_b,
            hidden: h,
        };
        let run = |tape: &mut Tape, cell: &LstmNodes, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<(usize, NodeId)>> {
            let mut hs = tape.leaf(Array::zeros(&[h]));
            let mut cs = tape.leaf(Array::zeros(&[h]));
            let mut out = Vec::new();
            for t in order {
                (hs, cs) = cell.step(tape, emb[t], hs, cs)?;
                out.push((t, hs));
            }
            Ok(out)
        };
        let n = emb.len();
        let f = run(&mut self.tape, &fwd, &mut (0..n))?;
        let mut b = run(&mut self.tape, &bwd, &mut (0..n).rev())?;
        b.reverse();
        self.rows = f
            .iter()
            .zip(&b)
            .map(|(&(_, hf), &(_, hb))| self.tape.concat(&[hf, hb]))
            .collect::<Result<_>>()?;
        self.summary = self.tape.concat(&[f[n - 1].1, b[0].1])?;
        Ok(())
    }

    /// `tanh(x . w + b)`
    fn dense_tanh(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let z = self.tape.vecmat(x, w)?;
        let z = self.tape.add(z, b)?;
        Ok(self.tape.tanh(z))
    }

    /// `sigmoid(x . w + b)` split into one node per output.
    fn dense_sigmoids(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<Vec<NodeId>> {
        let z = self.tape.vecmat(x, w)?;
        let z = self.tape.add(z, b)?;
        let s = self.tape.sigmoid(z);
        (0..self.tape.value(s).len()).map(|i| self.tape.index(s, i)).collect()
    }

    /// Order: wider, deeper, unchanged.
    pub fn selector(&mut self) -> Result<Dist> {
        let z = self.dense_tanh(self.summary, self.p.sel_w1, self.p.sel_b1)?;
        let s = self.dense_sigmoids(z, self.p.sel_w2, self.p.sel_b2)?;
        Ok(self.normalise(s.into_iter().map(Some).collect()))
    }

    pub fn wider(&mut self, mask: &[bool]) -> Result<Dist> {
        let mut sig = Vec::with_capacity(mask.len());
        for (i, &ok) in mask.iter().enumerate() {
            if !ok {
                sig.push(None);
                continue;
            }
            let z = self.dense_tanh(self.rows[i], self.p.wid_w1, self.p.wid_b1)?;
            sig.push(Some(self.dense_sigmoids(z, self.p.wid_w2, self.p.wid_b2)?[0]));
        }
        Ok(self.normalise(sig))
    }

    fn deep_hidden(&mut self) -> Result<NodeId> {
        if let Some(h) = self.deep_hidden {
            return Ok(h);
        }
        let h = self.dense_tanh(self.summary, self.p.deep_a, self.p.deep_ab)?;
        self.deep_hidden = Some(h);
        Ok(h)
    }

    /// Order: [`LayerKind::ALL`].
    pub fn deeper_kind(&mut self) -> Result<Dist> {
        let h1 = self.deep_hidden()?;
        let s = self.dense_sigmoids(h1, self.p.deep_type_w, self.p.deep_type_b)?;
        Ok(self.normalise(s.into_iter().map(Some).collect()))
    }

    /// Insert-after slots 0..=N; slot 0 (front) scores a learned vector,
    /// slot p scores encoder row p-1.
    pub fn deeper_position(&mut self, kind: LayerKind, slots: usize) -> Result<Dist> {
        let h1 = self.deep_hidden()?;
        let k = self.tape.row(self.p.deep_kind_emb, kind.index())?;
        let a = self.tape.vecmat(k, self.p.deep_uk)?;
        let b = self.tape.vecmat(h1, self.p.deep_uh)?;
        let z = self.tape.add(a, b)?;
        let z = self.tape.add(z, self.p.deep_ub)?;
        let h2 = self.tape.tanh(z);
        let ctx = self.tape.vecmat(h2, self.p.deep_ph)?;
        let mut sig = Vec::with_capacity(slots);
        for slot in 0..slots {
            let v = if slot == 0 { self.p.deep_front } else { self.rows[slot - 1] };
            let z = self.tape.vecmat(v, self.p.deep_ps)?;
            let z = self.tape.add(z, ctx)?;
            let z = self.tape.add(z, self.p.deep_pb)?;
            let e = self.tape.tanh(z);
            sig.push(Some(self.dense_sigmoids(e, self.p.deep_v, self.p.deep_vb)?[0]));
        }
        Ok(self.normalise(sig))
    }

    fn normalise(&self, sigmoids: Vec<Option<NodeId>>) -> Dist {
        let raw: Vec<Real> = sigmoids.iter().map(|s| s.map_or(0.0, |n| self.tape.scalar(n))).collect();
        let total: Real = raw.iter().sum();
        let live = sigmoids.iter().filter(|s| s.is_some()).count();
        if total > 0.0 {
            Dist {
                probs: raw.iter().map(|r| r / total).collect(),
                sigmoids,
                degenerate: false,
            }
        } else {
            let u = if live > 0 { 1.0 / live as Real } else { 0.0 };
            Dist {
                probs: sigmoids.iter().map(|s| if s.is_some() { u } else { 0.0 }).collect(),
                sigmoids,
                degenerate: live > 0,
            }
        }
    }

    /// `log p_i = log sigma_i - log sum_j sigma_j` over unmasked entries.
    pub fn log_prob(&mut self, d: &Dist, i: usize) -> Result<NodeId> {
        if d.degenerate {
            return Ok(self.tape.leaf(Array::scalar(d.probs[i].ln())));
        }
        let live: Vec<NodeId> = d.sigmoids.iter().flatten().copied().collect();
        let all = self.tape.concat(&live)?;
        let total = self.tape.sum(all);
        let lt = self.tape.log(total);
        let si = d.sigmoids[i].expect("sampled entries are unmasked");
        let ls = self.tape.log(si);
        self.tape.sub(ls, lt)
    }
}
