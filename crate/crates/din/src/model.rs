//! LR, Embedding&MLP (Base), and DIN models: forward prediction, loss, and
//! the full backward pass.
//!
//! Base and DIN share the same wiring — embed each feature group, pool each
//! multi-hot group into a fixed-width slot, concatenate, run the MLP into a
//! two-way softmax — and differ only in how user-behavior groups are pooled:
//! Base sum-pools them, DIN pools them adaptively against the candidate
//! embedding through the local activation unit. Groups over the same id
//! space (a behavior group and its ad-side partner) share one embedding
//! table so behaviors and candidates live in a common space.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activation::{ActivationKind, ActivationParams, Moments, Phase};
use crate::embedding::{EmbeddingTable, SparseGradient};
use crate::error::{Error, Result};
use crate::features::{Category, Encoding, FeatureSchema, Instance};
use crate::interest::{ActivationUnitParams, UnitGrads};

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lr,
    Base,
    Din,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Base => "base",
            ModelKind::Din => "din",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lr" => Some(ModelKind::Lr),
            "base" => Some(ModelKind::Base),
            "din" => Some(ModelKind::Din),
            _ => None,
        }
    }
}

/// Assignment of feature groups to embedding tables. A user-behavior group
/// and an ad group with the same cardinality are assumed to index the same
/// id space and share one table; every other group gets its own.
#[derive(Debug, Clone, PartialEq)]
pub struct TablePlan {
    /// group index -> table index
    pub group_table: Vec<usize>,
    /// behavior group index -> ad group it attends against (same table)
    pub partner_ad_group: Vec<Option<usize>>,
    pub table_names: Vec<String>,
    pub table_cardinalities: Vec<usize>,
}

pub fn plan_tables(schema: &FeatureSchema) -> TablePlan {
    let groups = schema.groups();
    let mut group_table = vec![usize::MAX; groups.len()];
    let mut table_names = Vec::new();
    let mut table_cardinalities = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        if group_table[i] != usize::MAX {
            continue;
        }
        let t = table_names.len();
        group_table[i] = t;
        table_names.push(g.name.clone());
        table_cardinalities.push(g.cardinality);
        let wants = match g.category {
            Category::UserBehavior => Some(Category::Ad),
            Category::Ad => Some(Category::UserBehavior),
            _ => None,
        };
        if let Some(want) = wants {
            if let Some(j) = groups.iter().enumerate().position(|(j, o)| {
                group_table[j] == usize::MAX
                    && j != i
                    && o.category == want
                    && o.cardinality == g.cardinality
            }) {
                group_table[j] = t;
            }
        }
    }
    let partner_ad_group = groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            if g.category != Category::UserBehavior {
                return None;
            }
            groups.iter().enumerate().position(|(j, o)| {
                o.category == Category::Ad && group_table[j] == group_table[i]
            })
        })
        .collect();
    TablePlan {
        group_table,
        partner_ad_group,
        table_names,
        table_cardinalities,
    }
}

/// One fully connected layer, `out_dim x in_dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        DenseLayer {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    /// y = W x + b for a batch laid out n x in_dim; returns n x out_dim.
    fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * self.out_dim];
        for i in 0..n {
            let xi = &x[i * self.in_dim..(i + 1) * self.in_dim];
            let oi = &mut out[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, b) in oi.iter_mut().zip(&self.bias) {
                *o = *b;
            }
            for (j, &xj) in xi.iter().enumerate() {
                if xj == 0.0 {
                    continue;
                }
                for k in 0..self.out_dim {
                    oi[k] += self.weights[k * self.in_dim + j] * xj;
                }
            }
        }
        out
    }
}

/// Hidden stack plus a final width-2 layer feeding a two-way softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    /// One activation per hidden layer (layers.len() - 1 entries).
    pub activations: Vec<ActivationParams>,
}

impl Mlp {
    pub fn init(
        input_dim: usize,
        hidden_widths: &[usize],
        act: ActivationKind,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layers = Vec::new();
        let mut activations = Vec::new();
        let mut prev = input_dim;
        for &w in hidden_widths {
            layers.push(DenseLayer::init(prev, w, rng));
            activations.push(ActivationParams::new(act, w));
            prev = w;
        }
        layers.push(DenseLayer::init(prev, 2, rng));
        Mlp {
            layers,
            activations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrParams {
    /// Per-group weight vectors over each group's id space.
    pub weights: Vec<Vec<f64>>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepParams {
    pub kind: ModelKind,
    pub embedding_dim: usize,
    pub tables: Vec<EmbeddingTable>,
    pub plan: TablePlan,
    /// Local activation unit; present iff kind == Din.
    pub unit: Option<ActivationUnitParams>,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    Lr(LrParams),
    Deep(DeepParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub schema: FeatureSchema,
    pub body: ModelBody,
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match &self.body {
            ModelBody::Lr(_) => ModelKind::Lr,
            ModelBody::Deep(d) => d.kind,
        }
    }

    /// Zero-initialized logistic regression over the raw sparse features.
    pub fn init_lr(schema: FeatureSchema) -> Self {
        let weights = schema
            .groups()
            .iter()
            .map(|g| vec![0.0; g.cardinality])
            .collect();
        ModelParams {
            schema,
            body: ModelBody::Lr(LrParams { weights, bias: 0.0 }),
        }
    }

    /// Embedding&MLP model; `kind` picks Base (sum pooling) or Din
    /// (adaptive pooling, which requires every behavior group to have an
    /// ad-side partner over the same id space).
    pub fn init_deep(
        schema: FeatureSchema,
        kind: ModelKind,
        embedding_dim: usize,
        hidden_widths: &[usize],
        act: ActivationKind,
        unit_hidden_width: usize,
        seed: u64,
    ) -> Result<Self> {
        assert!(kind != ModelKind::Lr);
        let plan = plan_tables(&schema);
        if kind == ModelKind::Din {
            for g in schema.behavior_groups() {
                if plan.partner_ad_group[g].is_none() {
                    return Err(Error::InvalidInput(format!(
                        "behavior group `{}` has no ad-side partner of equal cardinality",
                        schema.group(g).name
                    )));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = plan
            .table_names
            .iter()
            .zip(&plan.table_cardinalities)
            .map(|(name, &k)| EmbeddingTable::init(name.clone(), k, embedding_dim, rng.gen()))
            .collect();
        let unit = (kind == ModelKind::Din).then(|| {
            ActivationUnitParams::init(embedding_dim, unit_hidden_width, act, rng.gen())
        });
        let input_dim = schema.group_count() * embedding_dim;
        let mlp = Mlp::init(input_dim, hidden_widths, act, &mut rng);
        Ok(ModelParams {
            schema,
            body: ModelBody::Deep(DeepParams {
                kind,
                embedding_dim,
                tables,
                plan,
                unit,
                mlp,
            }),
        })
    }
}

/// Model output for one instance.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Predicted click probability, clamped inside (0, 1).
    pub probability: f64,
    /// DIN only: per behavior group, the un-normalized weights the local
    /// activation unit assigned to each behavior id.
    pub attention: Option<Vec<(usize, Vec<f64>)>>,
}

/// Negative log-likelihood of one prediction, with the probability clamped
/// away from the boundaries for stability.
pub fn nll_loss(p: f64, label: bool) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean NLL over a batch.
pub fn batch_nll(probs: &[f64], labels: &[bool]) -> f64 {
    debug_assert_eq!(probs.len(), labels.len());
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| nll_loss(p, y))
        .sum();
    total / probs.len() as f64
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Attention bookkeeping for one instance and one behavior group.
#[derive(Debug, Clone)]
struct GroupAttention {
    group: usize,
    /// H x hidden_width hidden pre-activations, row-major.
    hidden_pre: Vec<f64>,
    weights: Vec<f64>,
}

/// Everything the backward pass needs from a batch forward.
#[derive(Debug, Clone)]
pub struct BatchCache {
    n: usize,
    /// n x mlp-input concatenated slots.
    x0: Vec<f64>,
    /// Per MLP layer: n x out_dim pre-activations.
    pre: Vec<Vec<f64>>,
    /// Per hidden layer: n x out_dim post-activations.
    post: Vec<Vec<f64>>,
    /// Per hidden layer: the Dice moments used (None for PReLU).
    mlp_moments: Vec<Option<Moments>>,
    /// Per instance: attention state per behavior group (DIN only).
    attention: Vec<Vec<GroupAttention>>,
    unit_moments: Option<Moments>,
    pub probs: Vec<f64>,
}

impl BatchCache {
    /// The concatenated slot vector for instance `i` (testing hook).
    pub fn input_row(&self, i: usize) -> &[f64] {
        let w = self.x0.len() / self.n;
        &self.x0[i * w..(i + 1) * w]
    }
}

impl ModelParams {
    /// Forward over a batch. `Training` drives Dice with batch statistics
    /// and returns the moment updates to fold into the running averages;
    /// `Inference` freezes the stored moments and mutates nothing.
    pub fn forward_batch(
        &self,
        batch: &[&Instance],
        phase: Phase,
    ) -> Result<(BatchCache, Vec<Moments>)> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        match &self.body {
            ModelBody::Lr(lr) => {
                let mut probs = Vec::with_capacity(n);
                for inst in batch {
                    let mut z = lr.bias;
                    for (g, ids) in inst.ids.iter().enumerate() {
                        for &id in ids {
                            z += lr.weights[g][id as usize];
                        }
                    }
                    probs.push(clamp_prob(crate::activation::sigmoid(z)));
                }
                Ok((
                    BatchCache {
                        n,
                        x0: Vec::new(),
                        pre: Vec::new(),
                        post: Vec::new(),
                        mlp_moments: Vec::new(),
                        attention: Vec::new(),
                        unit_moments: None,
                        probs,
                    },
                    Vec::new(),
                ))
            }
            ModelBody::Deep(deep) => self.forward_deep(deep, batch, phase),
        }
    }

    fn forward_deep(
        &self,
        deep: &DeepParams,
        batch: &[&Instance],
        phase: Phase,
    ) -> Result<(BatchCache, Vec<Moments>)> {
        let n = batch.len();
        let dim = deep.embedding_dim;
        let groups = self.schema.groups();
        let in_dim = groups.len() * dim;
        let mut updates = Vec::new();

        // Stage 1 (DIN): hidden pre-activations for every (instance,
        // behavior) pair, so a Dice unit can take batch statistics over all
        // pairs at once.
        let mut attention: Vec<Vec<GroupAttention>> = vec![Vec::new(); n];
        let mut unit_moments = None;
        if deep.kind == ModelKind::Din {
            let unit = deep.unit.as_ref().expect("DIN model carries a unit");
            let mut flat_pre = Vec::new();
            for (i, inst) in batch.iter().enumerate() {
                for (g, spec) in groups.iter().enumerate() {
                    if spec.category != Category::UserBehavior {
                        continue;
                    }
                    let table = &deep.tables[deep.plan.group_table[g]];
                    let partner = deep.plan.partner_ad_group[g]
                        .expect("DIN behavior groups have partners");
                    let cand_id = batch[i].ids[partner][0];
                    let candidate = table.row(cand_id);
                    let mut hidden_pre = Vec::with_capacity(inst.ids[g].len() * unit.hidden_width);
                    for &bid in &inst.ids[g] {
                        if bid as usize >= table.cardinality() {
                            return Err(Error::IdOutOfRange {
                                group: spec.name.clone(),
                                id: bid,
                                cardinality: table.cardinality(),
                            });
                        }
                        let input = unit.build_input(table.row(bid), candidate)?;
                        let pre = unit.hidden_pre(&input);
                        flat_pre.extend_from_slice(&pre);
                        hidden_pre.extend_from_slice(&pre);
                    }
                    attention[i].push(GroupAttention {
                        group: g,
                        hidden_pre,
                        weights: Vec::new(),
                    });
                }
            }
            if !flat_pre.is_empty() {
                let (_, m) = unit.act.compute_batch(phase, &flat_pre, unit.hidden_width)?;
                if let Some(m) = m {
                    if phase == Phase::Training {
                        updates.push(m.clone());
                    }
                    unit_moments = Some(m);
                }
            } else if matches!(unit.act, ActivationParams::Dice(_)) {
                // no pairs in this batch: fall back to the stored moments
                let (_, m) = unit.act.compute_batch(Phase::Inference, &[], unit.hidden_width)
                    .unwrap_or((Vec::new(), None));
                unit_moments = m;
                if phase == Phase::Training {
                    // keep update slots aligned: an empty batch leaves the
                    // running moments untouched
                }
            }
        }

        // Stage 2: pooled slots and the concatenated MLP input.
        let mut x0 = vec![0.0; n * in_dim];
        for (i, inst) in batch.iter().enumerate() {
            let mut att_idx = 0;
            for (g, spec) in groups.iter().enumerate() {
                let table = &deep.tables[deep.plan.group_table[g]];
                let slot = &mut x0[i * in_dim + g * dim..i * in_dim + (g + 1) * dim];
                let ids = &inst.ids[g];
                match spec.encoding {
                    Encoding::OneHot => {
                        let id = ids[0];
                        if id as usize >= table.cardinality() {
                            return Err(Error::IdOutOfRange {
                                group: spec.name.clone(),
                                id,
                                cardinality: table.cardinality(),
                            });
                        }
                        slot.copy_from_slice(table.row(id));
                    }
                    Encoding::MultiHot => {
                        let adaptive = deep.kind == ModelKind::Din
                            && spec.category == Category::UserBehavior;
                        if adaptive {
                            let unit = deep.unit.as_ref().unwrap();
                            let att = &mut attention[i][att_idx];
                            debug_assert_eq!(att.group, g);
                            att_idx += 1;
                            let mut weights = Vec::with_capacity(ids.len());
                            for (j, &bid) in ids.iter().enumerate() {
                                let pre = &att.hidden_pre
                                    [j * unit.hidden_width..(j + 1) * unit.hidden_width];
                                let hidden = match (&unit.act, &unit_moments) {
                                    (ActivationParams::Dice(p), Some(m)) => dice_row(p, m, pre),
                                    _ => unit.act.forward_inference_row(pre),
                                };
                                let w = unit.output(&hidden);
                                for (s, e) in slot.iter_mut().zip(table.row(bid)) {
                                    *s += w * e;
                                }
                                weights.push(w);
                            }
                            att.weights = weights;
                        } else {
                            for &id in ids {
                                if id as usize >= table.cardinality() {
                                    return Err(Error::IdOutOfRange {
                                        group: spec.name.clone(),
                                        id,
                                        cardinality: table.cardinality(),
                                    });
                                }
                                for (s, e) in slot.iter_mut().zip(table.row(id)) {
                                    *s += e;
                                }
                            }
                        }
                    }
                }
            }
        }

        // Stage 3: MLP with a two-way softmax head.
        let mut pre = Vec::with_capacity(deep.mlp.layers.len());
        let mut post = Vec::with_capacity(deep.mlp.activations.len());
        let mut mlp_moments = Vec::with_capacity(deep.mlp.activations.len());
        let mut x = x0.clone();
        for (l, layer) in deep.mlp.layers.iter().enumerate() {
            let s = layer.forward(&x, n);
            pre.push(s.clone());
            if l < deep.mlp.activations.len() {
                let act = &deep.mlp.activations[l];
                let (a, m) = act.compute_batch(phase, &s, layer.out_dim)?;
                if phase == Phase::Training {
                    if let Some(m) = &m {
                        updates.push(m.clone());
                    }
                }
                mlp_moments.push(m);
                post.push(a.clone());
                x = a;
            } else {
                x = s;
            }
        }
        let probs: Vec<f64> = (0..n)
            .map(|i| clamp_prob(crate::activation::sigmoid(x[i * 2 + 1] - x[i * 2])))
            .collect();
        Ok((
            BatchCache {
                n,
                x0,
                pre,
                post,
                mlp_moments,
                attention,
                unit_moments,
                probs,
            },
            updates,
        ))
    }

    /// Applies the moment updates a training forward returned. Update order
    /// matches the forward's: unit moments first (if any), then hidden
    /// layers front to back.
    pub fn apply_moment_updates(&mut self, updates: &[Moments]) {
        let ModelBody::Deep(deep) = &mut self.body else {
            return;
        };
        let mut iter = updates.iter();
        if deep.kind == ModelKind::Din {
            if let Some(unit) = &mut deep.unit {
                if matches!(unit.act, ActivationParams::Dice(_)) {
                    if let Some(m) = iter.next() {
                        unit.act.update_running(m);
                    }
                }
            }
        }
        for act in &mut deep.mlp.activations {
            if matches!(act, ActivationParams::Dice(_)) {
                if let Some(m) = iter.next() {
                    act.update_running(m);
                }
            }
        }
    }

    /// Inference for one instance; pure, safe to call concurrently.
    pub fn predict(&self, inst: &Instance) -> Result<Prediction> {
        let (cache, _) = self.forward_batch(&[inst], Phase::Inference)?;
        let attention = (self.kind() == ModelKind::Din).then(|| {
            cache.attention[0]
                .iter()
                .map(|a| (a.group, a.weights.clone()))
                .collect()
        });
        Ok(Prediction {
            probability: cache.probs[0],
            attention,
        })
    }
}

fn dice_row(p: &crate::activation::DiceParams, m: &Moments, s: &[f64]) -> Vec<f64> {
    s.iter()
        .enumerate()
        .map(|(c, &v)| {
            let inv_std = 1.0 / (m.var[c] + p.epsilon).sqrt();
            let prob = crate::activation::sigmoid((v - m.mean[c]) * inv_std);
            prob * v + (1.0 - prob) * p.alpha[c] * v
        })
        .collect()
}

/// Full gradient set for one batch. Embedding gradients are sparse and only
/// carry ids present in the batch; for LR models `tables` holds one
/// width-1 sparse gradient per feature group.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tables: Vec<SparseGradient>,
    pub mlp_weights: Vec<Vec<f64>>,
    pub mlp_bias: Vec<Vec<f64>>,
    pub mlp_alpha: Vec<Vec<f64>>,
    pub unit: Option<UnitGrads>,
    pub lr_bias: f64,
}

impl ModelParams {
    /// Gradients of the mean NLL over the batch w.r.t. every parameter.
    pub fn backward_batch(
        &self,
        batch: &[&Instance],
        labels: &[bool],
        cache: &BatchCache,
    ) -> Result<Gradients> {
        debug_assert_eq!(batch.len(), labels.len());
        let n = batch.len() as f64;
        match &self.body {
            ModelBody::Lr(lr) => {
                let mut tables: Vec<SparseGradient> = self
                    .schema
                    .groups()
                    .iter()
                    .map(|_| SparseGradient::new())
                    .collect();
                let mut lr_bias = 0.0;
                for (i, inst) in batch.iter().enumerate() {
                    let g = (cache.probs[i] - labels[i] as u8 as f64) / n;
                    lr_bias += g;
                    for (gi, ids) in inst.ids.iter().enumerate() {
                        for &id in ids {
                            tables[gi].accumulate(id, &[g]);
                        }
                    }
                }
                let _ = lr;
                Ok(Gradients {
                    tables,
                    mlp_weights: Vec::new(),
                    mlp_bias: Vec::new(),
                    mlp_alpha: Vec::new(),
                    unit: None,
                    lr_bias,
                })
            }
            ModelBody::Deep(deep) => self.backward_deep(deep, batch, labels, cache),
        }
    }

    fn backward_deep(
        &self,
        deep: &DeepParams,
        batch: &[&Instance],
        labels: &[bool],
        cache: &BatchCache,
    ) -> Result<Gradients> {
        let n = batch.len();
        let nf = n as f64;
        let dim = deep.embedding_dim;
        let groups = self.schema.groups();
        let in_dim = groups.len() * dim;
        let n_layers = deep.mlp.layers.len();

        // softmax + NLL head: with p = sigmoid(l1 - l0),
        // dL/dl1 = (p - y)/n and dL/dl0 is its negative
        let mut upstream = vec![0.0; n * 2];
        for i in 0..n {
            let g = (cache.probs[i] - labels[i] as u8 as f64) / nf;
            upstream[i * 2] = -g;
            upstream[i * 2 + 1] = g;
        }

        let mut mlp_weights: Vec<Vec<f64>> = deep
            .mlp
            .layers
            .iter()
            .map(|l| vec![0.0; l.weights.len()])
            .collect();
        let mut mlp_bias: Vec<Vec<f64>> = deep
            .mlp
            .layers
            .iter()
            .map(|l| vec![0.0; l.bias.len()])
            .collect();
        let mut mlp_alpha: Vec<Vec<f64>> = deep
            .mlp
            .activations
            .iter()
            .map(|a| vec![0.0; a.channels()])
            .collect();

        // walk the MLP backwards
        for l in (0..n_layers).rev() {
            let layer = &deep.mlp.layers[l];
            let input: &[f64] = if l == 0 {
                &cache.x0
            } else {
                &cache.post[l - 1]
            };
            // dW = upstream^T . input, db = column sums, d_input = upstream . W
            let mut d_input = vec![0.0; n * layer.in_dim];
            for i in 0..n {
                let up = &upstream[i * layer.out_dim..(i + 1) * layer.out_dim];
                let xi = &input[i * layer.in_dim..(i + 1) * layer.in_dim];
                let di = &mut d_input[i * layer.in_dim..(i + 1) * layer.in_dim];
                for k in 0..layer.out_dim {
                    let u = up[k];
                    if u == 0.0 {
                        continue;
                    }
                    mlp_bias[l][k] += u;
                    let row = &layer.weights[k * layer.in_dim..(k + 1) * layer.in_dim];
                    let grow = &mut mlp_weights[l][k * layer.in_dim..(k + 1) * layer.in_dim];
                    for j in 0..layer.in_dim {
                        grow[j] += u * xi[j];
                        di[j] += u * row[j];
                    }
                }
            }
            upstream = d_input;
            if l > 0 {
                let act = &deep.mlp.activations[l - 1];
                let (d_pre, d_alpha) = act.backward_batch(
                    &cache.pre[l - 1],
                    deep.mlp.layers[l - 1].out_dim,
                    cache.mlp_moments[l - 1].as_ref(),
                    &upstream,
                );
                mlp_alpha[l - 1] = d_alpha;
                upstream = d_pre;
            }
        }

        // split the input gradient into per-group slots and push it through
        // the pooling into the sparse tables
        let mut tables: Vec<SparseGradient> = deep
            .tables
            .iter()
            .map(|_| SparseGradient::new())
            .collect();
        let mut unit_grads = deep.unit.as_ref().map(UnitGrads::zeros);
        for (i, inst) in batch.iter().enumerate() {
            let mut att_idx = 0;
            for (g, spec) in groups.iter().enumerate() {
                let t = deep.plan.group_table[g];
                let table = &deep.tables[t];
                let slot_grad = &upstream[i * in_dim + g * dim..i * in_dim + (g + 1) * dim];
                let ids = &inst.ids[g];
                match spec.encoding {
                    Encoding::OneHot => {
                        tables[t].accumulate(ids[0], slot_grad);
                    }
                    Encoding::MultiHot => {
                        let adaptive = deep.kind == ModelKind::Din
                            && spec.category == Category::UserBehavior;
                        if adaptive {
                            let unit = deep.unit.as_ref().unwrap();
                            let att = &cache.attention[i][att_idx];
                            att_idx += 1;
                            let partner = deep.plan.partner_ad_group[g].unwrap();
                            let cand_id = inst.ids[partner][0];
                            let candidate = table.row(cand_id);
                            let grads = unit_grads.as_mut().unwrap();
                            for (j, &bid) in ids.iter().enumerate() {
                                let behavior = table.row(bid);
                                let w = att.weights[j];
                                // direct path: v += w_j e_j
                                let mut d_behavior: Vec<f64> =
                                    slot_grad.iter().map(|u| w * u).collect();
                                let d_w: f64 = slot_grad
                                    .iter()
                                    .zip(behavior)
                                    .map(|(u, e)| u * e)
                                    .sum();
                                let pre = &att.hidden_pre
                                    [j * unit.hidden_width..(j + 1) * unit.hidden_width];
                                let (d_b_unit, d_c_unit) = unit.backward_pair(
                                    behavior,
                                    candidate,
                                    pre,
                                    cache.unit_moments.as_ref(),
                                    d_w,
                                    grads,
                                );
                                for (a, b) in d_behavior.iter_mut().zip(&d_b_unit) {
                                    *a += b;
                                }
                                tables[t].accumulate(bid, &d_behavior);
                                tables[t].accumulate(cand_id, &d_c_unit);
                            }
                        } else {
                            for &id in ids {
                                tables[t].accumulate(id, slot_grad);
                            }
                        }
                    }
                }
            }
        }

        Ok(Gradients {
            tables,
            mlp_weights,
            mlp_bias,
            mlp_alpha,
            unit: unit_grads,
            lr_bias: 0.0,
        })
    }
}

/// Walks every dense (non-embedding) parameter tensor of a deep model in a
/// fixed order, pairing it with its gradient.
pub fn for_each_dense_pair(
    deep: &mut DeepParams,
    grads: &Gradients,
    f: &mut impl FnMut(&str, &mut [f64], &[f64]),
) {
    for (l, layer) in deep.mlp.layers.iter_mut().enumerate() {
        f(
            &format!("mlp.layer{l}.weights"),
            &mut layer.weights,
            &grads.mlp_weights[l],
        );
        f(
            &format!("mlp.layer{l}.bias"),
            &mut layer.bias,
            &grads.mlp_bias[l],
        );
    }
    for (l, act) in deep.mlp.activations.iter_mut().enumerate() {
        f(
            &format!("mlp.act{l}.alpha"),
            act.alpha_mut(),
            &grads.mlp_alpha[l],
        );
    }
    if let (Some(unit), Some(ug)) = (&mut deep.unit, &grads.unit) {
        f("unit.layer1.weights", &mut unit.layer1_weights, &ug.layer1_weights);
        f("unit.layer1.bias", &mut unit.layer1_bias, &ug.layer1_bias);
        f("unit.act.alpha", unit.act.alpha_mut(), &ug.alpha);
        f("unit.layer2.weights", &mut unit.layer2_weights, &ug.layer2_weights);
        let mut b2 = [unit.layer2_bias];
        let gb2 = [ug.layer2_bias];
        f("unit.layer2.bias", &mut b2, &gb2);
        unit.layer2_bias = b2[0];
    }
}
