"""Cross-view retrieval evaluation: pairwise distances, mAP, Rank-k, CMC.

Protocol: for each query the gallery is sorted by ascending distance with
ties broken by gallery index; gallery rows sharing BOTH identity and camera
id with the query are excluded; queries left with no relevant row are
dropped from every denominator.  AP is the mean of precision at each
relevant rank; CMC[k] is the fraction of evaluated queries with a relevant
row in the top k.

Embeddings travel in a small binary container: a little-endian header
(magic ``EMB1``, uint32 N, uint32 D) followed by N*D float32 values in row
major order, with a JSONL sidecar of {"identity": ..., "camera": ...} rows.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from viewlift.errors import ValidationError

EMBEDDING_MAGIC = b"EMB1"


@dataclass
class ProbeSet:
    embeddings: np.ndarray        # (N, D) float
    identities: list
    cameras: list

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise ValidationError("embeddings must be a 2-D matrix")
        n = len(self.embeddings)
        if len(self.identities) != n or len(self.cameras) != n:
            raise ValidationError("identities/cameras length must match embeddings")
        if not np.isfinite(self.embeddings).all():
            raise ValidationError("embeddings must be finite")


@dataclass
class EvalResult:
    mAP: float
    cmc: list
    num_queries: int
    metric: str

    @property
    def rank1(self) -> float:
        return self.cmc[0]

    def to_json(self) -> str:
        obj = {"mAP": self.mAP, "rank1": self.rank1, "cmc": self.cmc,
               "num_queries": self.num_queries, "metric": self.metric}
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def pairwise_distances(query: ProbeSet, gallery: ProbeSet,
                       metric: str = "cosine") -> np.ndarray:
    """Nq x Ng distance matrix.

    Cosine distance is 1 - <q, g> on L2-normalized rows; zero-norm rows
    normalize to the zero vector and sit at distance 1 from everything.
    The Euclidean option uses plain unnormalized L2 distance.
    """
    q = query.embeddings
    g = gallery.embeddings
    if q.shape[1] != g.shape[1]:
        raise ValidationError(
            f"embedding dimension mismatch: {q.shape[1]} vs {g.shape[1]}")
    if metric == "cosine":
        qn = np.linalg.norm(q, axis=1, keepdims=True)
        gn = np.linalg.norm(g, axis=1, keepdims=True)
        qh = np.divide(q, qn, out=np.zeros_like(q), where=qn > 0)
        gh = np.divide(g, gn, out=np.zeros_like(g), where=gn > 0)
        return 1.0 - qh @ gh.T
    if metric == "euclidean":
        diff = q[:, None, :] - g[None, :, :]
        return np.sqrt((diff * diff).sum(axis=2))
    raise ValidationError(f"unknown distance metric {metric!r}")


def evaluate(query: ProbeSet, gallery: ProbeSet, max_rank: int = 50,
             metric: str = "cosine") -> EvalResult:
    """Run the retrieval protocol and return mAP plus the CMC curve."""
    if len(query.embeddings) < 1 or len(gallery.embeddings) < 1:
        raise ValidationError("query and gallery must be non-empty")
    if max_rank < 1:
        raise ValidationError("max_rank must be >= 1")
    dist = pairwise_distances(query, gallery, metric)
    g_ids = np.asarray(gallery.identities, dtype=object)
    g_cams = np.asarray(gallery.cameras, dtype=object)

    aps = []
    first_hit_ranks = []
    for qi in range(len(query.embeddings)):
        order = np.argsort(dist[qi], kind="stable")
        keep = ~((g_ids[order] == query.identities[qi])
                 & (g_cams[order] == query.cameras[qi]))
        ranked_ids = g_ids[order][keep]
        relevant = ranked_ids == query.identities[qi]
        num_rel = int(relevant.sum())
        if num_rel == 0:
            continue
        ranks = np.nonzero(relevant)[0] + 1              # 1-based ranks
        hits = np.arange(1, num_rel + 1, dtype=np.float64)
        aps.append(float((hits / ranks).mean()))
        first_hit_ranks.append(int(ranks[0]))

    if not aps:
        raise ValidationError("no query has a relevant gallery row after exclusion")

    first_hits = np.asarray(first_hit_ranks)
    cmc = [float((first_hits <= k).mean()) for k in range(1, max_rank + 1)]
    return EvalResult(mAP=float(np.mean(aps)), cmc=cmc,
                      num_queries=len(aps), metric=metric)


# --- binary embedding container ----------------------------------------------

def save_embeddings(probe: ProbeSet, emb_path, sidecar_path) -> None:
    emb = np.ascontiguousarray(probe.embeddings, dtype="<f4")
    n, d = emb.shape
    with open(emb_path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(emb.tobytes())
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        for identity, camera in zip(probe.identities, probe.cameras):
            fh.write(json.dumps({"identity": identity, "camera": camera},
                                sort_keys=True, separators=(",", ":")) + "\n")


def load_embeddings(emb_path, sidecar_path) -> ProbeSet:
    emb_path = Path(emb_path)
    data = emb_path.read_bytes()
    if len(data) < 12 or data[:4] != EMBEDDING_MAGIC:
        raise ValidationError(f"bad embedding container magic in {emb_path}")
    n, d = struct.unpack("<II", data[4:12])
    expected = 12 + 4 * n * d
    if len(data) != expected:
        raise ValidationError(
            f"embedding container {emb_path}: expected {expected} bytes, got {len(data)}")
    emb = np.frombuffer(data[12:], dtype="<f4").reshape(n, d)

    identities = []
    cameras = []
    for line in open(sidecar_path, "r", encoding="utf-8"):
        if not line.strip():
            continue
        obj = json.loads(line)
        identities.append(obj["identity"])
        cameras.append(obj["camera"])
    if len(identities) != n:
        raise ValidationError(
            f"sidecar rows ({len(identities)}) do not match embedding count ({n})")
    return ProbeSet(embeddings=emb.astype(np.float64), identities=identities,
                    cameras=cameras)
