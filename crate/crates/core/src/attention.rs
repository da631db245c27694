//! Conditioning sequences, cross-attention maps and the head-masked
//! cross-attention constraint applied inside the personalized branch.

use std::collections::HashMap;
use std::sync::RwLock;

use ndarray::{Array2, Axis};

use crate::error::{invalid, Result};
use crate::masks::{HeadMask, MaskPyramid, DEFAULT_BINARIZE_THRESHOLD};

/// `N×D` token embeddings plus the index of the identity token, if active.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSequence {
    tokens: Array2<f64>,
    identity_index: Option<usize>,
    descriptor: String,
}

impl ConditioningSequence {
    pub fn new(
        tokens: Array2<f64>,
        identity_index: Option<usize>,
        descriptor: impl Into<String>,
    ) -> Result<Self> {
        let (n, d) = tokens.dim();
        if n == 0 || d == 0 {
            return Err(invalid!("conditioning must have N >= 1 and D >= 1, got {n}x{d}"));
        }
        if let Some(i) = identity_index {
            if i >= n {
                return Err(invalid!("identity index {i} out of range for {n} tokens"));
            }
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("conditioning tokens must be finite"));
        }
        Ok(Self {
            tokens,
            identity_index,
            descriptor: descriptor.into(),
        })
    }

    pub fn tokens(&self) -> &Array2<f64> {
        &self.tokens
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn identity_index(&self) -> Option<usize> {
        self.identity_index
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    /// Mean over tokens (length `D`).
    pub fn pooled(&self) -> Vec<f64> {
        self.tokens
            .mean_axis(Axis(0))
            .expect("non-empty by construction")
            .to_vec()
    }
}

/// Row-stochastic `(H·W)×N` cross-attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    weights: Array2<f64>,
    spatial_shape: (usize, usize),
}

impl AttentionMap {
    pub fn new(weights: Array2<f64>, spatial_shape: (usize, usize)) -> Result<Self> {
        let (rows, n) = weights.dim();
        if rows != spatial_shape.0 * spatial_shape.1 || n == 0 {
            return Err(invalid!(
                "attention map {rows}x{n} does not match spatial shape {spatial_shape:?}"
            ));
        }
        if weights.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid!("attention weights must be finite and non-negative"));
        }
        Ok(Self {
            weights,
            spatial_shape,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn into_weights(self) -> Array2<f64> {
        self.weights
    }

    pub fn spatial_shape(&self) -> (usize, usize) {
        self.spatial_shape
    }

    pub fn n_tokens(&self) -> usize {
        self.weights.ncols()
    }

    /// Largest deviation of any row sum from 1.
    pub fn row_sum_error(&self) -> f64 {
        self.weights
            .sum_axis(Axis(1))
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// `(H·W)×N` gate: column `identity_index` is the flattened head mask, every
/// other column is ones.
pub fn build_cac_mask(head_mask: &HeadMask, n_tokens: usize, identity_index: usize) -> Result<Array2<f64>> {
    if identity_index >= n_tokens {
        return Err(invalid!(
            "identity index {identity_index} out of range for {n_tokens} tokens"
        ));
    }
    if !head_mask.is_binary() {
        return Err(invalid!("attention constraint needs a binarized head mask"));
    }
    let flat = head_mask.flatten();
    let mut m = Array2::ones((flat.len(), n_tokens));
    m.column_mut(identity_index).assign(&flat);
    Ok(m)
}

/// Elementwise product `A ⊙ M`; rows are not renormalized.
pub fn apply_cac(attention: &AttentionMap, cac_mask: &Array2<f64>) -> Result<AttentionMap> {
    if attention.weights.dim() != cac_mask.dim() {
        return Err(invalid!(
            "constraint mask {:?} does not match attention {:?}",
            cac_mask.dim(),
            attention.weights.dim()
        ));
    }
    Ok(AttentionMap {
        weights: &attention.weights * cac_mask,
        spatial_shape: attention.spatial_shape,
    })
}

/// Where an attention map came from inside the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionLayerInfo {
    pub layer_index: usize,
    pub spatial_shape: (usize, usize),
    pub n_tokens: usize,
}

/// Hook invoked on every post-softmax cross-attention map before it weights
/// the values. Must return a map of identical shape.
pub trait AttentionInterceptor: Send + Sync {
    fn intercept(&self, layer: &AttentionLayerInfo, map: AttentionMap) -> Result<AttentionMap>;
}

/// Passes every map through unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityInterceptor;

impl AttentionInterceptor for IdentityInterceptor {
    fn intercept(&self, _layer: &AttentionLayerInfo, map: AttentionMap) -> Result<AttentionMap> {
        Ok(map)
    }
}

/// Cross-attention constraint for one identity token.
///
/// Selects (or resamples and binarizes) the pyramid level matching each map's
/// spatial shape and caches the resulting gate per `(H, W, N)`.
#[derive(Debug)]
pub struct CacInterceptor {
    pyramid: MaskPyramid,
    identity_index: Option<usize>,
    threshold: f64,
    cache: RwLock<HashMap<(usize, usize, usize), Array2<f64>>>,
}

impl CacInterceptor {
    pub fn new(pyramid: MaskPyramid, identity_index: Option<usize>) -> Self {
        Self {
            pyramid,
            identity_index,
            threshold: DEFAULT_BINARIZE_THRESHOLD,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn identity_index(&self) -> Option<usize> {
        self.identity_index
    }

    fn gate(&self, shape: (usize, usize), n_tokens: usize, identity: usize) -> Result<Array2<f64>> {
        let key = (shape.0, shape.1, n_tokens);
        if let Some(m) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(m.clone());
        }
        let level = self.pyramid.level_or_resize(shape)?.binarize(self.threshold)?;
        let gate = build_cac_mask(&level, n_tokens, identity)?;
        self.cache
            .write()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| gate.clone());
        Ok(gate)
    }

    pub fn cached_gates(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }
}

impl AttentionInterceptor for CacInterceptor {
    fn intercept(&self, layer: &AttentionLayerInfo, map: AttentionMap) -> Result<AttentionMap> {
        let Some(identity) = self.identity_index else {
            return Ok(map);
        };
        let gate = self.gate(map.spatial_shape(), map.n_tokens(), identity)?;
        debug_assert_eq!(layer.spatial_shape, map.spatial_shape());
        apply_cac(&map, &gate)
    }
}

/// Applies several interceptors in order; used for multiple subjects, each
/// gating its own identity token with its own mask.
pub struct InterceptorChain<'a> {
    stages: Vec<&'a dyn AttentionInterceptor>,
}

impl<'a> InterceptorChain<'a> {
    pub fn new(stages: Vec<&'a dyn AttentionInterceptor>) -> Self {
        Self { stages }
    }
}

impl AttentionInterceptor for InterceptorChain<'_> {
    fn intercept(&self, layer: &AttentionLayerInfo, mut map: AttentionMap) -> Result<AttentionMap> {
        for stage in &self.stages {
            map = stage.intercept(layer, map)?;
        }
        Ok(map)
    }
}
