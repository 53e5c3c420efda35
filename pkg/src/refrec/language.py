"""
language.py - Phrase embeddings for referring expressions

Pipeline per referring expression:
    token vectors (backend) -> mean pooling -> PCA projection

Backends:
    - toy_encode: deterministic context-free token vectors derived from a
      hash of each whitespace token (stand-in for a frozen language model)
    - embedding file: externally computed per-phrase vectors, one record
      per line as  phrase<TAB>v1,v2,...,vD

The PCA model is fit once on training phrases and frozen afterwards.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_RAW_DIM = 32
DEFAULT_EMBED_DIM = 16


@dataclass(frozen=True)
class PhraseEmbedding:
    """Reduced phrase vector with the phrase it came from."""
    vector: np.ndarray
    phrase: str = ""

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


@dataclass
class PcaModel:
    """
    Frozen PCA projection.

    Attributes:
        mean: (D_raw,) sample mean
        components: (k, D_raw) orthonormal rows, largest variance first
        explained_variance: (k,) non-increasing eigenvalues of the sample covariance
    """
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def raw_dim(self) -> int:
        return int(self.mean.shape[0])

    @property
    def k(self) -> int:
        return int(self.components.shape[0])


# ----------------------------------------------------------------------
# Token backend
# ----------------------------------------------------------------------
def tokenize(phrase: str) -> List[str]:
    return phrase.split()


def token_vector(token: str, raw_dim: int = DEFAULT_RAW_DIM) -> np.ndarray:
    """Deterministic vector in [-1, 1]^raw_dim for one token string."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    return rng.uniform(-1.0, 1.0, size=raw_dim)


def toy_encode(phrase: str, raw_dim: int = DEFAULT_RAW_DIM) -> np.ndarray:
    """
    One row per whitespace token; each row depends on the token alone.

    Returns:
        (n_tokens, raw_dim) float64 token matrix
    """
    tokens = tokenize(phrase)
    if not tokens:
        raise ValueError(f"Cannot encode empty phrase: {phrase!r}")
    return np.stack([token_vector(t, raw_dim) for t in tokens])


def mean_pool(tokens: np.ndarray) -> np.ndarray:
    """Column-wise mean of a token matrix."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ValueError(f"Token matrix must be 2-D with at least one row, got shape {tokens.shape}")
    return tokens.mean(axis=0)


# ----------------------------------------------------------------------
# PCA
# ----------------------------------------------------------------------
def _fix_signs(components: np.ndarray) -> np.ndarray:
    # Largest-magnitude coordinate of each component is made positive
    idx = np.abs(components).argmax(axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def pca_fit(samples: Union[Sequence[np.ndarray], np.ndarray], k: int) -> PcaModel:
    """
    Fit a k-component PCA by symmetric eigendecomposition of the sample covariance.

    Args:
        samples: (n, D_raw) data, n >= k
        k: number of components, 1 <= k <= D_raw
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"PCA samples must form a 2-D array, got shape {x.shape}")
    n, d = x.shape
    if k < 1:
        raise ValueError(f"PCA needs k >= 1, got {k}")
    if k > d:
        raise ValueError(f"PCA k={k} exceeds raw dimension {d}")
    if n < k:
        raise ValueError(f"PCA with k={k} needs at least {k} samples, got {n}")

    mean = x.mean(axis=0)
    centered = x - mean
    # A single sample has zero covariance
    cov = centered.T @ centered / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)

    # eigh returns ascending order; stable sort keeps ties deterministic
    order = np.argsort(-eigvals, kind="stable")[:k]
    variances = np.clip(eigvals[order], 0.0, None)
    components = _fix_signs(eigvecs[:, order].T.copy())
    return PcaModel(mean=mean, components=components, explained_variance=variances)


def pca_transform(model: PcaModel, v: np.ndarray, phrase: str = "") -> PhraseEmbedding:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (model.raw_dim,):
        raise ValueError(f"PCA input length {v.shape} does not match model dimension ({model.raw_dim},)")
    return PhraseEmbedding(vector=model.components @ (v - model.mean), phrase=phrase)


def reconstruction_error(model: PcaModel, v: np.ndarray) -> float:
    """Norm of the part of (v - mean) outside the component span."""
    centered = np.asarray(v, dtype=np.float64) - model.mean
    recon = model.components.T @ (model.components @ centered)
    return float(np.linalg.norm(centered - recon))


# ----------------------------------------------------------------------
# Embedding files
# ----------------------------------------------------------------------
def load_embedding_file(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """
    Read phrase vectors from a TAB-separated text file.

    Lines starting with '#' and blank lines are skipped. A repeated phrase
    keeps the last vector and logs a warning.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Embedding file not found: {path}")

    vectors: Dict[str, np.ndarray] = {}
    dim: Optional[int] = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise ValueError(f"{path}:{lineno}: expected 'phrase<TAB>v1,v2,...'")
            phrase, values = parts
            try:
                vec = np.array([float(v) for v in values.split(",")], dtype=np.float64)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed float in vector")
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ValueError(f"{path}:{lineno}: vector length {vec.shape[0]} differs from {dim}")
            if phrase in vectors:
                logger.warning(f"{path}:{lineno}: duplicate phrase {phrase!r}, keeping the last vector")
            vectors[phrase] = vec
    return vectors


def write_embedding_file(path: Union[str, Path], vectors: Dict[str, np.ndarray]):
    """Write phrase vectors; repr() floats make the round trip exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for phrase, vec in vectors.items():
            if "\t" in phrase or "\n" in phrase:
                raise ValueError(f"Phrase contains TAB or newline: {phrase!r}")
            f.write(phrase + "\t" + ",".join(repr(float(v)) for v in vec) + "\n")


# ----------------------------------------------------------------------
# Embedder
# ----------------------------------------------------------------------
@dataclass
class PhraseEmbedder:
    """
    Resolves phrases to raw vectors (file map or toy encoder) and projects
    them with a PCA model fit on training phrases.
    """
    raw_dim: int = DEFAULT_RAW_DIM
    embed_dim: int = DEFAULT_EMBED_DIM
    table: Optional[Dict[str, np.ndarray]] = None
    pca: Optional[PcaModel] = None
    _cache: Dict[str, PhraseEmbedding] = field(default_factory=dict, repr=False)

    @classmethod
    def from_file(cls, path: Union[str, Path], embed_dim: int = DEFAULT_EMBED_DIM) -> "PhraseEmbedder":
        table = load_embedding_file(path)
        if not table:
            raise ValueError(f"Embedding file has no entries: {path}")
        raw_dim = next(iter(table.values())).shape[0]
        return cls(raw_dim=raw_dim, embed_dim=embed_dim, table=table)

    def raw_vector(self, phrase: str) -> np.ndarray:
        if self.table is not None:
            if phrase not in self.table:
                raise ValueError(f"No embedding for phrase {phrase!r}")
            return self.table[phrase]
        return mean_pool(toy_encode(phrase, self.raw_dim))

    def fit(self, phrases: Iterable[str]) -> PcaModel:
        samples = [self.raw_vector(p) for p in phrases]
        self.pca = pca_fit(samples, self.embed_dim)
        self._cache.clear()
        logger.info(f"Fit phrase PCA on {len(samples)} phrases: {self.raw_dim} -> {self.embed_dim} dims")
        return self.pca

    def embed(self, phrase: str) -> PhraseEmbedding:
        if self.pca is None:
            raise ValueError("PhraseEmbedder used before fit()")
        if phrase not in self._cache:
            self._cache[phrase] = pca_transform(self.pca, self.raw_vector(phrase), phrase)
        return self._cache[phrase]

    def embed_all(self, phrases: Sequence[str]) -> List[PhraseEmbedding]:
        return [self.embed(p) for p in phrases]
