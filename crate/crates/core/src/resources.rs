//! GPU groups, model placement and per-GPU memory accounting.
//!
//! Weights, gradients and optimizer state are sharded over a group's FSDP
//! degree; the generator's KV cache is sharded over its context-parallel
//! degree and held twice while training so backpropagation sees an
//! unmodified copy. All per-GPU quantities are rounded up to whole bytes.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Nominal HBM of one 80 GB accelerator.
pub const HBM_80GB: u64 = 80 * 1024 * 1024 * 1024;

/// Capacity sentinel that no placement can exceed.
pub const UNLIMITED_HBM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResourceError {
    #[error("shard degree {degree} must be >= 1 and divide the group size {gpu_count}")]
    InvalidShardDegree { degree: u32, gpu_count: u32 },
    #[error("group must contain at least one GPU")]
    EmptyGroup,
    #[error("ratio {g}:{c}:{t} does not split {total} GPUs into whole groups")]
    IndivisibleRatio { total: u32, g: u32, c: u32, t: u32 },
    #[error("KV cache copies must be 1 or 2, got {0}")]
    InvalidCopies(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Critic,
    Teacher,
    Inference,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Critic => "critic",
            Role::Teacher => "teacher",
            Role::Inference => "inference",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GpuGroup {
    pub role: Role,
    pub gpu_count: u32,
    pub hbm_bytes: u64,
    pub cp_degree: u32,
    pub fsdp_degree: u32,
}

impl GpuGroup {
    pub fn new(role: Role, gpu_count: u32, hbm_bytes: u64, cp_degree: u32, fsdp_degree: u32) -> Result<Self, ResourceError> {
        let group = Self {
            role,
            gpu_count,
            hbm_bytes,
            cp_degree,
            fsdp_degree,
        };
        group.validate()?;
        Ok(group)
    }

    pub fn validate(&self) -> Result<(), ResourceError> {
        if self.gpu_count == 0 {
            return Err(ResourceError::EmptyGroup);
        }
        for degree in [self.cp_degree, self.fsdp_degree] {
            if degree == 0 || self.gpu_count % degree != 0 {
                return Err(ResourceError::InvalidShardDegree {
                    degree,
                    gpu_count: self.gpu_count,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMemoryConfig {
    pub param_count: u64,
    pub bytes_per_param_weights: u64,
    /// Zero for frozen models.
    pub bytes_per_param_grads: u64,
    /// Zero for frozen models.
    pub bytes_per_param_optimizer: u64,
    pub activation_bytes_per_microbatch: u64,
}

impl ModelMemoryConfig {
    pub fn frozen(param_count: u64, bytes_per_param_weights: u64, activation_bytes_per_microbatch: u64) -> Self {
        Self {
            param_count,
            bytes_per_param_weights,
            bytes_per_param_grads: 0,
            bytes_per_param_optimizer: 0,
            activation_bytes_per_microbatch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KvCacheConfig {
    pub latent_frames: u64,
    pub tokens_per_frame: u64,
    pub layers: u64,
    /// Bytes per token per layer for K and V together.
    pub kv_width_bytes: u64,
    pub copies: u32,
}

impl KvCacheConfig {
    pub fn validate(&self) -> Result<(), ResourceError> {
        if !(1..=2).contains(&self.copies) {
            return Err(ResourceError::InvalidCopies(self.copies));
        }
        Ok(())
    }

    pub fn total_bytes(&self) -> u128 {
        u128::from(self.latent_frames)
            * u128::from(self.tokens_per_frame)
            * u128::from(self.layers)
            * u128::from(self.kv_width_bytes)
            * u128::from(self.copies)
    }
}

fn saturate(v: u128) -> u64 {
    u64::try_from(v).unwrap_or(u64::MAX)
}

pub fn kv_cache_bytes_per_gpu(kv: &KvCacheConfig, cp_degree: u32) -> Result<u64, ResourceError> {
    if cp_degree == 0 {
        return Err(ResourceError::InvalidShardDegree {
            degree: 0,
            gpu_count: 0,
        });
    }
    Ok(saturate(kv.total_bytes().div_ceil(u128::from(cp_degree))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MemoryBreakdown {
    pub weights: u64,
    pub grads: u64,
    pub optimizer: u64,
    pub activations: u64,
    pub kv_cache: u64,
    pub total: u64,
}

impl MemoryBreakdown {
    fn finish(mut self) -> Self {
        self.total = [self.weights, self.grads, self.optimizer, self.activations, self.kv_cache]
            .into_iter()
            .fold(0u64, u64::saturating_add);
        self
    }

    fn add(self, other: Self) -> Self {
        Self {
            weights: self.weights.saturating_add(other.weights),
            grads: self.grads.saturating_add(other.grads),
            optimizer: self.optimizer.saturating_add(other.optimizer),
            activations: self.activations.saturating_add(other.activations),
            kv_cache: self.kv_cache.saturating_add(other.kv_cache),
            total: 0,
        }
        .finish()
    }
}

fn sharded(params: u64, bytes_per_param: u64, degree: u32) -> u64 {
    saturate((u128::from(params) * u128::from(bytes_per_param)).div_ceil(u128::from(degree.max(1))))
}

fn model_memory(group: &GpuGroup, model: &ModelMemoryConfig, microbatches_resident: u32) -> MemoryBreakdown {
    MemoryBreakdown {
        weights: sharded(model.param_count, model.bytes_per_param_weights, group.fsdp_degree),
        grads: sharded(model.param_count, model.bytes_per_param_grads, group.fsdp_degree),
        optimizer: sharded(model.param_count, model.bytes_per_param_optimizer, group.fsdp_degree),
        activations: model
            .activation_bytes_per_microbatch
            .saturating_mul(u64::from(microbatches_resident)),
        kv_cache: 0,
        total: 0,
    }
    .finish()
}

pub fn group_memory_per_gpu(
    group: &GpuGroup,
    model: &ModelMemoryConfig,
    kv: &KvCacheConfig,
    microbatches_resident: u32,
) -> MemoryBreakdown {
    let mut m = model_memory(group, model, microbatches_resident);
    m.kv_cache = kv_cache_bytes_per_gpu(kv, group.cp_degree.max(1)).unwrap_or(u64::MAX);
    m.finish()
}

/// A model hosted on a group together with how many micro-batches of its
/// activations stay resident.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostedModel {
    pub role: Role,
    pub memory: ModelMemoryConfig,
    pub microbatches_resident: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlacedGroup {
    pub group: GpuGroup,
    pub models: Vec<HostedModel>,
    pub kv: Option<KvCacheConfig>,
}

impl PlacedGroup {
    pub fn memory_per_gpu(&self) -> MemoryBreakdown {
        let mut total = self
            .models
            .iter()
            .map(|m| model_memory(&self.group, &m.memory, m.microbatches_resident))
            .fold(MemoryBreakdown::default(), MemoryBreakdown::add);
        if let Some(kv) = &self.kv {
            total.kv_cache = kv_cache_bytes_per_gpu(kv, self.group.cp_degree.max(1)).unwrap_or(u64::MAX);
        }
        total.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementStyle {
    Colocated,
    Disaggregated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Placement {
    pub groups: Vec<PlacedGroup>,
    pub style: PlacementStyle,
}

impl Placement {
    pub fn total_gpus(&self) -> u32 {
        self.groups.iter().map(|g| g.group.gpu_count).sum()
    }

    pub fn group(&self, role: Role) -> Option<&PlacedGroup> {
        self.groups.iter().find(|g| g.group.role == role)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Feasibility {
    /// Every group fits; `min_headroom_bytes` is the smallest spare capacity.
    Feasible { min_headroom_bytes: u64 },
    /// `group` indexes the placement's group with the largest shortfall.
    Infeasible { group: usize, role: Role, deficit_bytes: u64 },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }
}

pub fn check_feasibility(placement: &Placement) -> Feasibility {
    let mut worst: Option<(usize, Role, u64)> = None;
    let mut min_headroom = u64::MAX;
    for (i, pg) in placement.groups.iter().enumerate() {
        let total = pg.memory_per_gpu().total;
        if total > pg.group.hbm_bytes {
            let deficit = total - pg.group.hbm_bytes;
            if worst.is_none_or(|(_, _, d)| deficit > d) {
                worst = Some((i, pg.group.role, deficit));
            }
        } else {
            min_headroom = min_headroom.min(pg.group.hbm_bytes - total);
        }
    }
    match worst {
        Some((group, role, deficit_bytes)) => Feasibility::Infeasible {
            group,
            role,
            deficit_bytes,
        },
        None => Feasibility::Feasible {
            min_headroom_bytes: min_headroom,
        },
    }
}

/// Split `total_gpus` into generator, critic and teacher groups in the given
/// proportions. Groups carry no models and unit shard degrees.
pub fn placement_from_ratio(total_gpus: u32, ratio: (u32, u32, u32)) -> Result<Placement, ResourceError> {
    let (g, c, t) = ratio;
    let parts = g + c + t;
    let err = ResourceError::IndivisibleRatio { total: total_gpus, g, c, t };
    if parts == 0 || g == 0 || c == 0 || t == 0 || total_gpus % parts != 0 {
        return Err(err);
    }
    let unit = total_gpus / parts;
    let groups = [(Role::Generator, g), (Role::Critic, c), (Role::Teacher, t)]
        .into_iter()
        .map(|(role, share)| PlacedGroup {
            group: GpuGroup {
                role,
                gpu_count: share * unit,
                hbm_bytes: HBM_80GB,
                cp_degree: 1,
                fsdp_degree: 1,
            },
            models: Vec::new(),
            kv: None,
        })
        .collect();
    Ok(Placement {
        groups,
        style: PlacementStyle::Disaggregated,
    })
}

/// Shard layout of one group in a memory fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupLayout {
    pub gpus: u32,
    pub cp_degree: u32,
    pub fsdp_degree: u32,
}

/// Training memory fixture: three models, the generator's KV cache and two
/// candidate cluster layouts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryFixture {
    pub hbm_bytes: u64,
    pub generator: ModelMemoryConfig,
    pub critic: ModelMemoryConfig,
    pub teacher: ModelMemoryConfig,
    pub kv: KvCacheConfig,
    pub generator_microbatches_resident: u32,
    pub critic_microbatches_resident: u32,
    pub teacher_microbatches_resident: u32,
    pub colocated: GroupLayout,
    pub disaggregated_generator: GroupLayout,
    pub disaggregated_critic: GroupLayout,
    pub disaggregated_teacher: GroupLayout,
}

impl MemoryFixture {
    fn hosted(&self) -> [HostedModel; 3] {
        [
            HostedModel {
                role: Role::Generator,
                memory: self.generator,
                microbatches_resident: self.generator_microbatches_resident,
            },
            HostedModel {
                role: Role::Critic,
                memory: self.critic,
                microbatches_resident: self.critic_microbatches_resident,
            },
            HostedModel {
                role: Role::Teacher,
                memory: self.teacher,
                microbatches_resident: self.teacher_microbatches_resident,
            },
        ]
    }

    fn group(&self, role: Role, layout: &GroupLayout) -> Result<GpuGroup, ResourceError> {
        GpuGroup::new(role, layout.gpus, self.hbm_bytes, layout.cp_degree, layout.fsdp_degree)
    }

    /// All three models share one group; the KV cache is sharded by that
    /// group's context-parallel degree.
    pub fn colocated(&self) -> Result<Placement, ResourceError> {
        self.kv.validate()?;
        Ok(Placement {
            groups: vec![PlacedGroup {
                group: self.group(Role::Generator, &self.colocated)?,
                models: self.hosted().to_vec(),
                kv: Some(self.kv),
            }],
            style: PlacementStyle::Colocated,
        })
    }

    /// Each model on its own group; only the generator holds the KV cache.
    pub fn disaggregated(&self) -> Result<Placement, ResourceError> {
        self.kv.validate()?;
        let [gen, critic, teacher] = self.hosted();
        Ok(Placement {
            groups: vec![
                PlacedGroup {
                    group: self.group(Role::Generator, &self.disaggregated_generator)?,
                    models: vec![gen],
                    kv: Some(self.kv),
                },
                PlacedGroup {
                    group: self.group(Role::Critic, &self.disaggregated_critic)?,
                    models: vec![critic],
                    kv: None,
                },
                PlacedGroup {
                    group: self.group(Role::Teacher, &self.disaggregated_teacher)?,
                    models: vec![teacher],
                    kv: None,
                },
            ],
            style: PlacementStyle::Disaggregated,
        })
    }
}

/// CSV rows `{label, role, gpus, weights, grads, optimizer, activations, kv_cache, total, hbm}`.
pub fn memory_csv(placements: &[(&str, &Placement)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "placement",
        "role",
        "gpus",
        "weights",
        "grads",
        "optimizer",
        "activations",
        "kv_cache",
        "total",
        "hbm_bytes",
    ])
    .expect("in-memory csv");
    for (label, p) in placements {
        for pg in &p.groups {
            let m = pg.memory_per_gpu();
            w.write_record([
                label.to_string(),
                pg.group.role.to_string(),
                pg.group.gpu_count.to_string(),
                m.weights.to_string(),
                m.grads.to_string(),
                m.optimizer.to_string(),
                m.activations.to_string(),
                m.kv_cache.to_string(),
                m.total.to_string(),
                pg.group.hbm_bytes.to_string(),
            ])
            .expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}
