//! Loading samples from disk into network-ready batches.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::setting::{Manifests, Origin, SampleRef};
use crate::dataio::clips::{slowfast_indices, SLOWFAST_SPAN};
use crate::dataio::mpv;
use crate::error::{Error, Result};
use crate::models::{collate, prepare_clip, prepare_slowfast_at, ModelConfig, ModelInput, Prepared};

/// Default ceiling on cached prepared samples.
pub const DEFAULT_CACHE_BYTES: usize = 1 << 30;

#[derive(Default)]
struct Cache {
    /// Configuration the cached samples were prepared for.
    owner: Option<String>,
    items: HashMap<(Origin, usize, usize), Arc<Prepared>>,
    bytes: usize,
}

/// Manifests plus a bounded cache of resized clips and their flow stacks.
/// Dual-rate samples are drawn afresh each time and never cached.
pub struct Dataset {
    pub manifests: Manifests,
    budget: usize,
    cache: Mutex<Cache>,
}

impl Dataset {
    pub fn new(manifests: Manifests) -> Self {
        Dataset {
            manifests,
            budget: DEFAULT_CACHE_BYTES,
            cache: Mutex::new(Cache::default()),
        }
    }

    pub fn with_cache_budget(mut self, bytes: usize) -> Self {
        self.budget = bytes;
        self
    }

    /// Prepared input for one sample. `draw` seeds the window start of
    /// whole-video samples and is ignored otherwise.
    pub fn prepare(&self, cfg: &ModelConfig, s: &SampleRef, draw: u64) -> Result<Arc<Prepared>> {
        let m = self.manifests.get(s.origin)?;
        let e = m
            .entries
            .get(s.entry)
            .ok_or_else(|| Error::InvalidArgument(format!("sample refers to missing entry {}", s.entry)))?;
        let path = m.resolve(e);
        let Some(w) = s.window else {
            let mut rng = ChaCha8Rng::seed_from_u64(draw);
            let start = slowfast_indices(e.frame_count, &mut rng)?.start;
            let span = mpv::read_frames(&path, start, SLOWFAST_SPAN)?;
            return Ok(Arc::new(prepare_slowfast_at(cfg, &span, 0)?));
        };
        let owner = serde_json::to_string(cfg).expect("config serialises");
        let key = (s.origin, s.entry, w);
        {
            let mut c = self.cache.lock().expect("cache lock");
            if c.owner.as_deref() != Some(owner.as_str()) {
                *c = Cache {
                    owner: Some(owner.clone()),
                    ..Cache::default()
                };
            }
            if let Some(p) = c.items.get(&key) {
                return Ok(p.clone());
            }
        }
        let s_len = cfg.clip_len;
        let frames = mpv::read_frames(&path, w * s_len, s_len)?;
        let p = Arc::new(prepare_clip(cfg, &frames)?);
        let mut c = self.cache.lock().expect("cache lock");
        let size = p.byte_size();
        if c.owner.as_deref() == Some(owner.as_str()) && c.bytes + size <= self.budget {
            c.bytes += size;
            c.items.insert(key, p.clone());
        }
        Ok(p)
    }

    /// A batch and its labels; `draws[i]` goes with `samples[i]`.
    pub fn batch(&self, cfg: &ModelConfig, samples: &[SampleRef], draws: &[u64]) -> Result<(ModelInput<f32>, Vec<usize>)> {
        let prepared = samples
            .iter()
            .zip(draws)
            .map(|(s, &d)| self.prepare(cfg, s, d))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Prepared> = prepared.iter().map(|p| p.as_ref()).collect();
        Ok((collate(&refs)?, samples.iter().map(|s| s.label.index()).collect()))
    }

    /// Bytes currently held by the cache.
    pub fn cached_bytes(&self) -> usize {
        self.cache.lock().expect("cache lock").bytes
    }
}
