"""Curriculum-scheduled, identity-balanced epoch planning.

A synthetic sample generated with elevation shift delta_theta is rejected at
epoch e with probability

    P = max(0, 1 - e / warmup_epochs) * |delta_theta| / delta_theta_max

so hard (large-shift) views are rare early and unrestricted once the warmup
ends.  Epoch plans pack P identity groups per batch, each group holding
K_real real slots and K_syn synthetic slots.  One epoch covers every real
image exactly once (identities with fewer than K_real reals pad by
resampling with replacement); synthetic views are drawn from per-identity
pools that persist across epochs, so the full synthetic set is consumed
before any view repeats.

All randomness is derived from (seed, epoch[, identity]) streams, making
plans a pure function of (manifest, configs, epoch, incoming pool state).
"""

import json
from dataclasses import dataclass, field

from viewlift.assets import REAL, SYNTHETIC, DatasetManifest
from viewlift.errors import ValidationError
from viewlift.streams import derive_stream

# Consecutive curriculum rejections tolerated for one synthetic slot before
# falling back to the easiest (smallest |delta_theta|) pooled view; guarantees
# termination at epoch 0 where large-shift pools would otherwise livelock.
_MAX_REJECTIONS = 10


@dataclass(frozen=True)
class CurriculumConfig:
    warmup_epochs: int = 20
    delta_theta_max: float = 30.0

    def __post_init__(self):
        if self.warmup_epochs < 1:
            raise ValueError("warmup_epochs must be >= 1")
        if self.delta_theta_max <= 0:
            raise ValueError("delta_theta_max must be positive")


@dataclass(frozen=True)
class SamplerConfig:
    identities_per_batch: int = 32
    instances_per_identity: int = 4
    real_per_identity: int = 2
    synthetic_per_identity: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.identities_per_batch < 1:
            raise ValueError("identities_per_batch must be >= 1")
        if self.real_per_identity < 1:
            raise ValueError("real_per_identity must be >= 1")
        if self.synthetic_per_identity < 0:
            raise ValueError("synthetic_per_identity must be >= 0")
        if self.instances_per_identity != self.real_per_identity + self.synthetic_per_identity:
            raise ValueError(
                "instances_per_identity must equal real_per_identity + synthetic_per_identity")


@dataclass
class PlanItem:
    identity: str
    record: str
    domain: str
    delta_theta: float

    def to_obj(self):
        return {"identity": self.identity, "record": self.record,
                "domain": self.domain, "delta_theta": self.delta_theta}


@dataclass
class EpochPlan:
    epoch: int
    batches: list = field(default_factory=list)   # list of list of PlanItem

    def to_jsonl(self) -> str:
        lines = []
        for bi, batch in enumerate(self.batches):
            obj = {"epoch": self.epoch, "batch": bi,
                   "items": [item.to_obj() for item in batch]}
            lines.append(json.dumps(obj, sort_keys=True, separators=(",", ":")))
        return "\n".join(lines) + "\n"


@dataclass
class SyntheticPoolState:
    """Per-identity queues of not-yet-used synthetic record ids."""

    pools: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"pools": self.pools}, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SyntheticPoolState":
        obj = json.loads(text)
        pools = obj.get("pools", {})
        for identity, refs in pools.items():
            if len(set(refs)) != len(refs):
                raise ValidationError(f"pool for {identity!r} contains duplicates")
        return cls(pools={k: list(v) for k, v in pools.items()})

    def copy(self) -> "SyntheticPoolState":
        return SyntheticPoolState(pools={k: list(v) for k, v in self.pools.items()})


def rejection_prob(delta_theta: float, epoch: int,
                   cfg: CurriculumConfig = CurriculumConfig()) -> float:
    """Probability of rejecting a synthetic sample at the given epoch."""
    if abs(delta_theta) > cfg.delta_theta_max:
        raise ValidationError(
            f"|delta_theta| {abs(delta_theta)} exceeds maximum {cfg.delta_theta_max}")
    if epoch < 0:
        raise ValidationError("epoch must be >= 0")
    warmup = max(0.0, 1.0 - epoch / cfg.warmup_epochs)
    return warmup * abs(delta_theta) / cfg.delta_theta_max


def accept_sample(rng, delta_theta: float, epoch: int,
                  cfg: CurriculumConfig = CurriculumConfig()) -> bool:
    """Draw u ~ U[0,1); accept iff u >= rejection_prob."""
    return rng.random() >= rejection_prob(delta_theta, epoch, cfg)


def _real_groups(records, k_real, pad_rng):
    """Chunk one identity's real records into groups of k_real, padding the
    final short group by with-replacement resampling within the identity."""
    groups = []
    for start in range(0, len(records), k_real):
        chunk = list(records[start:start + k_real])
        while len(chunk) < k_real:
            chunk.append(records[int(pad_rng.integers(len(records)))])
        groups.append(chunk)
    return groups


def build_epoch_plan(manifest: DatasetManifest, sampler: SamplerConfig,
                     curriculum: CurriculumConfig, epoch: int,
                     state: SyntheticPoolState | None = None):
    """Plan one epoch of batches; returns (EpochPlan, updated pool state).

    Real records are partitioned per identity into groups of K_real (in
    manifest order, padded by resampling); the groups are shuffled with
    stream(seed, epoch) and packed identities_per_batch per batch, keeping a
    final partial batch so real coverage stays exact.  Synthetic slots pop
    views from the identity's pool, re-queueing curriculum-rejected draws at
    the back; after 10 consecutive rejections a slot takes the pool's
    easiest view unconditionally.  Exhausted pools refill from the manifest,
    reshuffled with stream(seed, epoch, identity).  Identities without any
    synthetic views fall back to real resamples for their synthetic slots.
    """
    if epoch < 0:
        raise ValidationError("epoch must be >= 0")
    state = state.copy() if state is not None else SyntheticPoolState()

    real_by_id: dict = {}
    syn_by_id: dict = {}
    records = manifest.by_id()
    for rec in manifest:
        bucket = real_by_id if rec.domain == REAL else syn_by_id
        bucket.setdefault(rec.identity, []).append(rec)
    if not real_by_id:
        raise ValidationError("manifest contains no real records")

    seed = sampler.seed
    identities = sorted(real_by_id)

    groups = []   # (identity, [real record ids])
    for identity in identities:
        pad_rng = derive_stream(seed, epoch, identity, "pad")
        recs = [r.record_id for r in real_by_id[identity]]
        for chunk in _real_groups(recs, sampler.real_per_identity, pad_rng):
            groups.append((identity, chunk))

    shuffle_rng = derive_stream(seed, epoch)
    order = shuffle_rng.permutation(len(groups))
    groups = [groups[i] for i in order]

    refill_rngs: dict = {}
    accept_rngs: dict = {}
    synfill_rngs: dict = {}

    def draw_synthetic(identity):
        pool = state.pools.setdefault(identity, [])
        if identity not in refill_rngs:
            refill_rngs[identity] = derive_stream(seed, epoch, identity)
            accept_rngs[identity] = derive_stream(seed, epoch, identity, "accept")
        rejections = 0
        while True:
            if not pool:
                refs = [r.record_id for r in syn_by_id[identity]]
                perm = refill_rngs[identity].permutation(len(refs))
                pool.extend(refs[i] for i in perm)
            if rejections >= _MAX_REJECTIONS:
                idx = min(range(len(pool)),
                          key=lambda i: abs(records[pool[i]].delta_theta))
                return pool.pop(idx)
            ref = pool.pop(0)
            if accept_sample(accept_rngs[identity], records[ref].delta_theta,
                             epoch, curriculum):
                return ref
            pool.append(ref)
            rejections += 1

    def fill_without_synthetics(identity):
        if identity not in synfill_rngs:
            synfill_rngs[identity] = derive_stream(seed, epoch, identity, "synfill")
        reals = [r.record_id for r in real_by_id[identity]]
        return reals[int(synfill_rngs[identity].integers(len(reals)))]

    batches = []
    for start in range(0, len(groups), sampler.identities_per_batch):
        batch = []
        for identity, real_refs in groups[start:start + sampler.identities_per_batch]:
            for ref in real_refs:
                batch.append(PlanItem(identity, ref, REAL, 0.0))
            for _ in range(sampler.synthetic_per_identity):
                if identity in syn_by_id:
                    ref = draw_synthetic(identity)
                    batch.append(PlanItem(identity, ref, SYNTHETIC,
                                          records[ref].delta_theta))
                else:
                    ref = fill_without_synthetics(identity)
                    batch.append(PlanItem(identity, ref, REAL, 0.0))
        batches.append(batch)

    return EpochPlan(epoch=epoch, batches=batches), state
