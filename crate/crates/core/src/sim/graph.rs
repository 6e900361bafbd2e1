//! Structural netlist of the accelerator, used to check that data only
//! moves between neighbouring units.

use crate::error::{Error, Result};
use crate::msa::ModelDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    /// Register-to-register wire; endpoints must be grid neighbours.
    Wire,
    /// Declared FIFO; endpoints may be anywhere.
    Fifo,
    /// One-to-many control net. Only the weight-latch enable may use it.
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub block: &'static str,
    pub x: i64,
    pub y: i64,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    pub nodes: Vec<Node>,
    pub edges: Vec<(usize, usize, EdgeKind)>,
}

pub const LATCH_ENABLE: &str = "latch_enable";

impl Graph {
    pub fn add(&mut self, block: &'static str, x: i64, y: i64) -> usize {
        self.nodes.push(Node { block, x, y });
        self.nodes.len() - 1
    }

    pub fn connect(&mut self, a: usize, b: usize, kind: EdgeKind) {
        self.edges.push((a, b, kind));
    }

    /// `rows × cols` grid with eastward and southward wires; returns node
    /// ids row-major.
    fn grid(&mut self, block: &'static str, ox: i64, oy: i64, rows: usize, cols: usize) -> Vec<usize> {
        let ids: Vec<usize> = (0..rows * cols)
            .map(|i| self.add(block, ox + (i % cols) as i64, oy + (i / cols) as i64))
            .collect();
        for r in 0..rows {
            for c in 0..cols {
                let id = ids[r * cols + c];
                if c + 1 < cols {
                    self.connect(id, ids[r * cols + c + 1], EdgeKind::Wire);
                }
                if r + 1 < rows {
                    self.connect(id, ids[(r + 1) * cols + c], EdgeKind::Wire);
                }
            }
        }
        ids
    }

    /// A row of units with wires in both directions.
    fn bidirectional_row(&mut self, block: &'static str, ox: i64, y: i64, width: usize) -> Vec<usize> {
        let ids: Vec<usize> = (0..width).map(|i| self.add(block, ox + i as i64, y)).collect();
        for w in ids.windows(2) {
            self.connect(w[0], w[1], EdgeKind::Wire);
            self.connect(w[1], w[0], EdgeKind::Wire);
        }
        ids
    }

    fn row(&mut self, block: &'static str, ox: i64, y: i64, width: usize) -> Vec<usize> {
        (0..width).map(|i| self.add(block, ox + i as i64, y)).collect()
    }

    fn stack(&mut self, upper: &[usize], lower: &[usize], kind: EdgeKind) {
        for (&a, &b) in upper.iter().zip(lower) {
            self.connect(a, b, kind);
        }
    }

    /// Fails on the first wire between non-neighbours or broadcast net not
    /// driven by the latch enable.
    pub fn check_locality(&self) -> Result<()> {
        for &(a, b, kind) in &self.edges {
            let (na, nb) = (&self.nodes[a], &self.nodes[b]);
            let ok = match kind {
                EdgeKind::Wire => (na.x - nb.x).abs() + (na.y - nb.y).abs() == 1,
                EdgeKind::Fifo => true,
                EdgeKind::Broadcast => na.block == LATCH_ENABLE,
            };
            if !ok {
                return Err(Error::InvalidConfig(format!(
                    "{kind:?} edge {}({},{}) -> {}({},{}) violates locality",
                    na.block, na.x, na.y, nb.block, nb.x, nb.y
                )));
            }
        }
        Ok(())
    }
}

/// Builds the netlist of one SA pipeline.
pub fn build_graph(dims: &ModelDims) -> Graph {
    let (n, d, dh) = (dims.n_tokens, dims.embed_dim, dims.head_dim());
    let mut g = Graph::default();

    // Projection array, post-MAC row, statistics rows and quantizers.
    let qkv = g.grid("qkv_array", 0, 0, d, 3 * dh);
    let post = g.row("qkv_postmac", 0, d as i64, 3 * dh);
    g.stack(&qkv[(d - 1) * 3 * dh..], &post, EdgeKind::Wire);
    let ln_q = g.bidirectional_row("ln_row_q", 0, d as i64 + 1, dh);
    let ln_k = g.bidirectional_row("ln_row_k", dh as i64, d as i64 + 1, dh);
    let vq = g.row("v_quant", 2 * dh as i64, d as i64 + 1, dh);
    g.stack(&post[..dh], &ln_q, EdgeKind::Wire);
    g.stack(&post[dh..2 * dh], &ln_k, EdgeKind::Wire);
    g.stack(&post[2 * dh..], &vq, EdgeKind::Wire);
    let nq = g.row("normq", 0, d as i64 + 2, 2 * dh);
    // element and aggregate both reach NormQ through the triangular delay
    g.stack(&ln_q, &nq[..dh], EdgeKind::Fifo);
    g.stack(&ln_k, &nq[dh..], EdgeKind::Fifo);

    // Score array fed by Q̃, weights from the K̃ loader.
    let ax = 4 * dh as i64;
    let enable = g.add(LATCH_ENABLE, -1, -1);
    let k_chain = g.grid("k_loader", ax, 0, dh, n);
    for &id in &k_chain {
        g.connect(enable, id, EdgeKind::Broadcast);
    }
    for c in 0..n {
        g.connect(nq[dh + c % dh], k_chain[c], EdgeKind::Fifo);
    }
    let a = g.grid("a_array", ax, 0, dh, n);
    for r in 0..dh {
        g.connect(nq[r], a[r * n], EdgeKind::Fifo);
    }
    let a_post = g.row("a_postmac", ax, dh as i64, n);
    g.stack(&a[(dh - 1) * n..], &a_post, EdgeKind::Wire);
    let exp = g.row("exp", ax, dh as i64 + 1, n);
    g.stack(&a_post, &exp, EdgeKind::Wire);
    let sum = g.bidirectional_row("sum_row", ax, dh as i64 + 2, n);
    g.stack(&exp, &sum, EdgeKind::Wire);
    let sq = g.row("scaleq", ax, dh as i64 + 3, n);
    g.stack(&sum, &sq, EdgeKind::Fifo);

    // Weighted-value array: A streams in, Ṽ sits in the loader.
    let vx = ax + n as i64 + 1;
    let v_chain = g.grid("v_loader", vx, 0, n, dh);
    for &id in &v_chain {
        g.connect(enable, id, EdgeKind::Broadcast);
    }
    for c in 0..dh {
        g.connect(vq[c], v_chain[c], EdgeKind::Fifo);
    }
    let av = g.grid("av_array", vx, 0, n, dh);
    for r in 0..n {
        g.connect(sq[r], av[r * dh], EdgeKind::Fifo);
    }
    let out = g.row("sa_quant", vx, n as i64, dh);
    g.stack(&av[(n - 1) * dh..], &out, EdgeKind::Wire);
    g
}
