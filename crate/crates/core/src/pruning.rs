//! l1-norm structured filter pruning.
//!
//! One pruning step ranks each convolution layer's filters by the l1 norm
//! of their weights, drops the lowest-ranked fraction `p` (always keeping
//! at least one), and performs channel surgery so the graph stays
//! consistent: producers lose output channels, the layers that consume
//! those channels lose the matching input slices.
//!
//! Channels are tracked in *groups*. Each convolution-kind layer produces a
//! group; a `SkipAdd` merges the groups of its two operands, because adding
//! activations channel-by-channel forces both producers to keep the same
//! filter set. Grouped layers share one keep decision.
//!
//! Iterating the step compounds: each iteration drops a fraction of the
//! *current* filters, so three iterations at `p` remove roughly
//! `1 − (1−p)³` of the originals. After every step the model is optionally
//! fine-tuned to recover accuracy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cost_model::{self, EnergyConstants, ResourceProfile};
use crate::error::{Error, Result};
use crate::nn::{train, Dataset, LayerKind, ModelGraph, TrainConfig};
use crate::segmentation::dataset_pixel_accuracy;
use crate::tensor::Tensor4;

/// l1 importance of one filter. Ordering is ascending by norm with ties
/// broken toward the lower filter index, i.e. "first to prune" sorts first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterScore {
    pub layer_index: usize,
    pub filter_index: usize,
    pub l1_norm: f64,
}

/// Scores every filter of one convolution-kind layer, sorted ascending by
/// l1 norm (ties → lower index first). Bias terms do not contribute.
pub fn score_filters(model: &ModelGraph, layer_index: usize) -> Result<Vec<FilterScore>> {
    let layer = model
        .layers
        .get(layer_index)
        .ok_or_else(|| Error::InvalidArgument(format!("no layer {layer_index}")))?;
    if !layer.kind.is_conv() {
        return Err(Error::NotPrunableLayer(layer_index));
    }
    let params = layer.params.as_ref().ok_or_else(|| {
        Error::InvalidArgument(format!("layer {layer_index} has no parameters allocated"))
    })?;
    let [out_c, in_c, kh, kw] = params.weight.shape();
    let per_filter = in_c * kh * kw;
    let mut scores: Vec<FilterScore> = (0..out_c)
        .map(|f| {
            let start = f * per_filter;
            let l1 = params.weight.data()[start..start + per_filter]
                .iter()
                .map(|w| w.abs())
                .sum();
            FilterScore { layer_index, filter_index: f, l1_norm: l1 }
        })
        .collect();
    scores.sort_by(|a, b| {
        a.l1_norm
            .partial_cmp(&b.l1_norm)
            .unwrap()
            .then(a.filter_index.cmp(&b.filter_index))
    });
    Ok(scores)
}

/// Filters kept when pruning a layer of `n` filters at ratio `p`:
/// `max(1, n − floor(p·n))`.
pub fn keep_count(n: usize, p: f64) -> usize {
    let dropped = (p * n as f64).floor() as usize;
    (n - dropped.min(n)).max(1)
}

/// Configuration of an iterative pruning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Fraction of current filters dropped per iteration, `0 ≤ p < 1`.
    pub ratio: f64,
    /// Number of prune(+fine-tune) iterations, `>= 1`.
    pub iterations: u32,
    /// Fine-tune epochs after each iteration; 0 disables fine-tuning.
    pub fine_tune_epochs_per_iter: usize,
    /// Indices of convolution-kind layers eligible for pruning. A channel
    /// group is pruned only when *all* its producers are listed.
    pub prunable_layers: BTreeSet<usize>,
}

/// What one pruning iteration did to one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPrune {
    pub layer_index: usize,
    pub filters_before: usize,
    pub filters_after: usize,
    /// Original indices of the removed filters, ascending.
    pub removed: Vec<usize>,
}

/// Record of one pruning iteration: surgery detail plus the post-iteration
/// (fine-tuned) accuracy and resource profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRecord {
    pub iteration: u32,
    pub layers: Vec<LayerPrune>,
    pub accuracy: f64,
    pub profile: ResourceProfile,
}

/// One stage of an iterative pruning run.
#[derive(Debug, Clone)]
pub struct PruneStage {
    pub iteration: u32,
    pub model: ModelGraph,
    pub record: PruneRecord,
}

/// Training/evaluation context for fine-tuning between iterations.
pub struct PruneData<'a> {
    pub train: &'a Dataset,
    pub eval: &'a Dataset,
    /// Template for fine-tune runs; `epochs` is overridden by
    /// [`PruneConfig::fine_tune_epochs_per_iter`].
    pub fine_tune: TrainConfig,
    pub energy: EnergyConstants,
}

/// Membership and consumer structure of the model's channel groups.
struct ChannelGroups {
    /// `producers[g]` — convolution layers whose output channels form
    /// group `g`.
    producers: Vec<Vec<usize>>,
    /// `consumers[g]` — convolution layers whose *input* channels are
    /// group `g`'s output.
    consumers: Vec<Vec<usize>>,
    /// Group feeding the final softmax (its channel count is the class
    /// count and must never shrink).
    logits_group: usize,
}

/// What produced the channels flowing into a given position of the graph.
#[derive(Clone, Copy, PartialEq)]
enum Source {
    ModelInput,
    Group(usize),
}

/// Walks the layer list, assigning channel groups and recording
/// producer/consumer relations. `SkipAdd` merges the groups of its two
/// operands via union-find.
fn channel_groups(model: &ModelGraph) -> Result<ChannelGroups> {
    let n = model.layers.len();
    let mut parent: Vec<usize> = Vec::new(); // union-find over group ids
    fn find(parent: &mut Vec<usize>, mut g: usize) -> usize {
        while parent[g] != g {
            parent[g] = parent[parent[g]];
            g = parent[g];
        }
        g
    }

    let mut producers_raw: Vec<Vec<usize>> = Vec::new();
    let mut consumer_edges: Vec<(usize, usize)> = Vec::new(); // (group, layer)
    let mut out_source: Vec<Source> = Vec::with_capacity(n);
    let mut cur = Source::ModelInput;
    let mut logits_group = None;

    for (i, layer) in model.layers.iter().enumerate() {
        match layer.kind {
            LayerKind::Conv2d { .. } | LayerKind::TransposedConv2d { .. } => {
                if let Source::Group(g) = cur {
                    consumer_edges.push((find(&mut parent, g), i));
                }
                let g = parent.len();
                parent.push(g);
                producers_raw.push(vec![i]);
                cur = Source::Group(g);
            }
            LayerKind::ReLU | LayerKind::MaxPool2d { .. } => {}
            LayerKind::SkipAdd { source } => {
                let lateral = out_source[source];
                match (cur, lateral) {
                    (Source::Group(a), Source::Group(b)) => {
                        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                        if ra != rb {
                            parent[rb] = ra;
                        }
                        cur = Source::Group(ra);
                    }
                    _ => {
                        return Err(Error::SurgeryShapeError(format!(
                            "layer {i}: skip-add over raw model input channels"
                        )))
                    }
                }
            }
            LayerKind::SoftmaxPerPixel => {
                if let Source::Group(g) = cur {
                    logits_group = Some(find(&mut parent, g));
                }
            }
        }
        out_source.push(cur);
    }

    // Compact to root groups.
    let mut producers: Vec<Vec<usize>> = vec![Vec::new(); parent.len()];
    for g in 0..producers_raw.len() {
        let root = find(&mut parent, g);
        let members = std::mem::take(&mut producers_raw[g]);
        producers[root].extend(members);
    }
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); parent.len()];
    for (g, layer) in consumer_edges {
        let root = find(&mut parent, g);
        consumers[root].push(layer);
    }
    let logits_group = logits_group.ok_or_else(|| {
        Error::SurgeryShapeError("model output does not come from a convolution".into())
    })?;
    Ok(ChannelGroups { producers, consumers, logits_group })
}

/// Keep decision for one group: the indices retained (ascending) and the
/// original indices removed.
fn keep_set_for_group(
    model: &ModelGraph,
    members: &[usize],
    m: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = member_filter_count(model, members[0])?;
    // Descending importance per member: best-ranked first.
    let mut rank_of: Vec<Vec<usize>> = Vec::with_capacity(members.len()); // rank_of[k][filter] = rank
    for &layer in members {
        let asc = score_filters(model, layer)?;
        let mut rank = vec![0usize; n];
        // asc is "prune first" order, so descending rank r means position
        // n−1−r from the end.
        for (pos, s) in asc.iter().rev().enumerate() {
            rank[s.filter_index] = pos;
        }
        rank_of.push(rank);
    }
    // Candidates: union of every member's top-m, ordered by the best rank
    // any member assigns (ties → lower filter index), truncated to m.
    let mut best_rank = vec![usize::MAX; n];
    for rank in &rank_of {
        for f in 0..n {
            if rank[f] < m {
                best_rank[f] = best_rank[f].min(rank[f]);
            }
        }
    }
    let mut candidates: Vec<usize> = (0..n).filter(|&f| best_rank[f] != usize::MAX).collect();
    candidates.sort_by_key(|&f| (best_rank[f], f));
    candidates.truncate(m);
    candidates.sort_unstable();
    let kept: BTreeSet<usize> = candidates.iter().copied().collect();
    let removed: Vec<usize> = (0..n).filter(|f| !kept.contains(f)).collect();
    Ok((candidates, removed))
}

fn member_filter_count(model: &ModelGraph, layer: usize) -> Result<usize> {
    model.layers[layer]
        .kind
        .conv_dims()
        .map(|(_, oc, _, _)| oc)
        .ok_or(Error::NotPrunableLayer(layer))
}

/// Copies `weight` keeping only the output channels in `kept` (axis 0).
fn slice_out_channels(weight: &Tensor4, kept: &[usize]) -> Tensor4 {
    let [_, in_c, kh, kw] = weight.shape();
    let mut out = Tensor4::zeros([kept.len(), in_c, kh, kw]);
    for (new_f, &old_f) in kept.iter().enumerate() {
        for ic in 0..in_c {
            for a in 0..kh {
                for b in 0..kw {
                    *out.at_mut(new_f, ic, a, b) = weight.at(old_f, ic, a, b);
                }
            }
        }
    }
    out
}

/// Copies `weight` keeping only the input channels in `kept` (axis 1).
fn slice_in_channels(weight: &Tensor4, kept: &[usize]) -> Tensor4 {
    let [out_c, _, kh, kw] = weight.shape();
    let mut out = Tensor4::zeros([out_c, kept.len(), kh, kw]);
    for f in 0..out_c {
        for (new_c, &old_c) in kept.iter().enumerate() {
            for a in 0..kh {
                for b in 0..kw {
                    *out.at_mut(f, new_c, a, b) = weight.at(f, old_c, a, b);
                }
            }
        }
    }
    out
}

fn set_out_channels(kind: &mut LayerKind, m: usize) {
    if let LayerKind::Conv2d { out_channels, .. } | LayerKind::TransposedConv2d { out_channels, .. } =
        kind
    {
        *out_channels = m;
    }
}

fn set_in_channels(kind: &mut LayerKind, m: usize) {
    if let LayerKind::Conv2d { in_channels, .. } | LayerKind::TransposedConv2d { in_channels, .. } =
        kind
    {
        *in_channels = m;
    }
}

/// One structured pruning step at ratio `p` over the groups whose
/// producers are all listed in `prunable_layers`. Returns the pruned model
/// and the per-layer surgery detail.
pub fn prune_step_detailed(
    model: &ModelGraph,
    p: f64,
    prunable_layers: &BTreeSet<usize>,
) -> Result<(ModelGraph, Vec<LayerPrune>)> {
    model.validate()?;
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "prune ratio must lie in [0, 1), got {p}"
        )));
    }
    if !model.has_params() {
        return Err(Error::InvalidArgument(
            "cannot prune a shape-only descriptor (no parameters allocated)".into(),
        ));
    }
    if prunable_layers.is_empty() {
        return Err(Error::InvalidArgument("prunable layer set is empty".into()));
    }
    for &idx in prunable_layers {
        let layer = model
            .layers
            .get(idx)
            .ok_or_else(|| Error::InvalidArgument(format!("no layer {idx}")))?;
        if !layer.kind.is_conv() {
            return Err(Error::NotPrunableLayer(idx));
        }
    }

    let groups = channel_groups(model)?;
    let mut pruned = model.clone();
    let mut detail: Vec<LayerPrune> = Vec::new();

    for (g, members) in groups.producers.iter().enumerate() {
        if members.is_empty() || !members.iter().all(|i| prunable_layers.contains(i)) {
            continue;
        }
        if g == groups.logits_group {
            return Err(Error::InvalidArgument(format!(
                "layers {members:?} produce the class logits and cannot be pruned"
            )));
        }
        // All members must agree on the filter count (guaranteed by
        // validate() for well-formed graphs, re-checked for safety).
        let n = member_filter_count(model, members[0])?;
        for &l in &members[1..] {
            if member_filter_count(model, l)? != n {
                return Err(Error::SurgeryShapeError(format!(
                    "skip-coupled layers {members:?} disagree on filter count"
                )));
            }
        }
        let m = keep_count(n, p);
        let (kept, removed) = keep_set_for_group(model, members, m)?;

        for &l in members {
            let layer = &mut pruned.layers[l];
            let params = layer.params.as_mut().expect("checked above");
            params.weight = slice_out_channels(&params.weight, &kept);
            params.bias = kept.iter().map(|&f| params.bias[f]).collect();
            set_out_channels(&mut layer.kind, m);
            detail.push(LayerPrune {
                layer_index: l,
                filters_before: n,
                filters_after: m,
                removed: removed.clone(),
            });
        }
        for &l in &groups.consumers[g] {
            let layer = &mut pruned.layers[l];
            let params = layer.params.as_mut().expect("all conv layers have params");
            params.weight = slice_in_channels(&params.weight, &kept);
            set_in_channels(&mut layer.kind, m);
        }
    }

    detail.sort_by_key(|d| d.layer_index);
    pruned
        .validate()
        .map_err(|e| Error::SurgeryShapeError(format!("pruned graph is inconsistent: {e}")))?;
    Ok((pruned, detail))
}

/// [`prune_step_detailed`] without the surgery report.
pub fn prune_step(
    model: &ModelGraph,
    p: f64,
    prunable_layers: &BTreeSet<usize>,
) -> Result<ModelGraph> {
    prune_step_detailed(model, p, prunable_layers).map(|(m, _)| m)
}

/// Runs `cfg.iterations` rounds of prune → fine-tune → evaluate, returning
/// every intermediate stage (iteration 1..=N). Fine-tune runs use
/// `data.fine_tune` with a per-iteration derived shuffle seed, so the whole
/// chain is deterministic.
pub fn iterative_prune(
    model: &ModelGraph,
    cfg: &PruneConfig,
    data: &PruneData,
) -> Result<Vec<PruneStage>> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be >= 1".into()));
    }
    let mut current = model.clone();
    let mut stages = Vec::with_capacity(cfg.iterations as usize);
    for iteration in 1..=cfg.iterations {
        let (next, layers) = prune_step_detailed(&current, cfg.ratio, &cfg.prunable_layers)?;
        current = next;
        if cfg.fine_tune_epochs_per_iter > 0 {
            let ft_cfg = TrainConfig {
                epochs: cfg.fine_tune_epochs_per_iter,
                shuffle_seed: data.fine_tune.shuffle_seed.wrapping_add(u64::from(iteration)),
                ..data.fine_tune.clone()
            };
            current = train(&current, data.train, &ft_cfg)?.model;
        }
        let accuracy = dataset_pixel_accuracy(&current, data.eval)?;
        let profile = cost_model::profile_model(&current, &data.energy)?;
        stages.push(PruneStage {
            iteration,
            model: current.clone(),
            record: PruneRecord { iteration, layers, accuracy, profile },
        });
    }
    Ok(stages)
}
