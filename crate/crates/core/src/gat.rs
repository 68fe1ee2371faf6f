//! Spatial fusion: two stacked multi-head graph-attention layers over the
//! agents present at a timestep, then mean pooling and an affine map.

use std::sync::Arc;

use crate::autodiff::{Graph, Segments, Tensor, Var};
use crate::blackout::{apply_mask, BlackoutMask};
use crate::error::{Error, Result};
use crate::features::ScenarioFeatures;
use crate::model::{idx, Hyperparams, ModelParams};

/// Parameters of a [`ModelParams`] registered as graph leaves.
#[derive(Debug, Clone)]
pub struct Bound {
    pub hyper: Hyperparams,
    pub vars: Vec<Var>,
}

impl Bound {
    /// Registers every parameter; `trainable` controls gradient tracking.
    pub fn new(g: &mut Graph, params: &ModelParams, trainable: bool) -> Result<Self> {
        let vars = params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect::<Result<_>>()?;
        Ok(Bound {
            hyper: params.hyper,
            vars,
        })
    }

    pub fn get(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// One multi-head GAT layer: project with `w`, attend within each segment,
/// concatenate heads.
pub fn gat_layer(g: &mut Graph, x: Var, w: Var, a: Var, heads: usize, segments: Segments) -> Result<Var> {
    if segments.is_empty() {
        return Err(Error::invalid("graph attention needs at least one node"));
    }
    let h = g.matmul(x, w)?;
    g.graph_attention(h, a, heads, segments)
}

/// Nodes and graph segments of one ego's view of a scenario.
#[derive(Debug, Clone)]
pub struct EgoView {
    pub ego: usize,
    /// Feature row of every node, graph by graph.
    pub rows: Arc<Vec<usize>>,
    /// One segment per timestep; the first row of each is the ego.
    pub segments: Segments,
}

impl EgoView {
    pub fn new(features: &ScenarioFeatures, ego: usize, mask: Option<&BlackoutMask>) -> Result<Self> {
        let nodes = apply_mask(features.n_agents, features.horizon, ego, mask)?;
        let mut rows = Vec::with_capacity(nodes.iter().map(Vec::len).sum());
        let mut segments = Vec::with_capacity(nodes.len());
        for (t, present) in nodes.iter().enumerate() {
            let lo = rows.len();
            rows.extend(present.iter().map(|&a| features.row_index(a, t)));
            segments.push((lo, rows.len()));
        }
        Ok(EgoView {
            ego,
            rows: Arc::new(rows),
            segments: Arc::new(segments),
        })
    }

    /// `R × 1` column with 1 on each segment's ego row.
    fn ego_indicator(&self) -> Tensor {
        let mut col = vec![0.0; self.rows.len()];
        for &(lo, _) in self.segments.iter() {
            col[lo] = 1.0;
        }
        Tensor::matrix(col.len(), 1, col).expect("column shape")
    }
}

/// Sensor projection `X · W₁` shared by every ego of a scenario, plus the
/// ego-bit row of `W₁`.
#[derive(Debug, Clone, Copy)]
pub struct SharedProjection {
    pub projected: Var,
    pub ego_row: Var,
}

impl SharedProjection {
    pub fn new(g: &mut Graph, p: &Bound, features: &ScenarioFeatures) -> Result<Self> {
        let sensor_dim = p.hyper.input_dim - 1;
        if features.rows.cols() != sensor_dim {
            return Err(Error::Shape {
                op: "gat1 input",
                left: vec![features.rows.cols()],
                right: vec![sensor_dim],
            });
        }
        let w = p.get(idx::GAT1_W);
        let w_sensor = g.slice(w, 0, 0, sensor_dim)?;
        let ego_row = g.slice(w, 0, sensor_dim, 1)?;
        let projected = g.sparse_matmul(features.rows.clone(), w_sensor)?;
        Ok(SharedProjection { projected, ego_row })
    }
}

/// Vars recorded for attention inspection.
#[derive(Debug, Clone, Default)]
pub struct FusionTrace {
    /// Graph-attention nodes, one per layer.
    pub gat: Vec<Var>,
}

/// Per-timestep graph embeddings `h_G` (`T × n`) for one ego view.
pub fn fuse_view(
    g: &mut Graph,
    p: &Bound,
    shared: SharedProjection,
    view: &EgoView,
    trace: Option<&mut FusionTrace>,
) -> Result<Var> {
    let k = p.hyper.gat_heads;
    let base = g.gather_rows(shared.projected, view.rows.clone())?;
    let ind = g.constant(view.ego_indicator())?;
    let ego = g.matmul(ind, shared.ego_row)?;
    let h1 = g.add(base, ego)?;
    let a1 = g.graph_attention(h1, p.get(idx::GAT1_A), k, view.segments.clone())?;
    let r1 = g.relu(a1);
    let a2 = gat_layer(g, r1, p.get(idx::GAT2_W), p.get(idx::GAT2_A), k, view.segments.clone())?;
    if let Some(tr) = trace {
        tr.gat.extend([a1, a2]);
    }
    let pooled = g.segment_mean(a2, view.segments.clone())?;
    let proj = g.matmul(pooled, p.get(idx::POOL_W))?;
    g.add_bias(proj, p.get(idx::POOL_B))
}

/// Graph embedding of a single frame from dense node features
/// (`N × input_dim`, ego bit included in the last column).
pub fn graph_embed(g: &mut Graph, p: &Bound, nodes: Var) -> Result<Var> {
    let (n_nodes, width) = g.value(nodes).dims2("graph_embed")?;
    if n_nodes == 0 {
        return Err(Error::invalid("graph_embed needs at least one present agent"));
    }
    if width != p.hyper.input_dim {
        return Err(Error::Shape {
            op: "graph_embed",
            left: vec![n_nodes, width],
            right: vec![p.hyper.input_dim],
        });
    }
    let k = p.hyper.gat_heads;
    let seg: Segments = Arc::new(vec![(0, n_nodes)]);
    let a1 = gat_layer(g, nodes, p.get(idx::GAT1_W), p.get(idx::GAT1_A), k, seg.clone())?;
    let r1 = g.relu(a1);
    let a2 = gat_layer(g, r1, p.get(idx::GAT2_W), p.get(idx::GAT2_A), k, seg.clone())?;
    let pooled = g.segment_mean(a2, seg)?;
    let proj = g.matmul(pooled, p.get(idx::POOL_W))?;
    g.add_bias(proj, p.get(idx::POOL_B))
}
