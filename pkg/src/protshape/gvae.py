"""Geometric VAE on preshape SRVFs with a fixed-concentration vMF latent.

Encoder: flattened (T, 3) SRVF -> dense/ReLU stack -> l-vector -> unit
sphere (the posterior mean direction).  Decoder: latent -> dense/ReLU stack
-> (T, 3) -> projection onto the preshape sphere.  The posterior is
vMF(mu, kappa) with kappa fixed, so its KL to the uniform prior is a
constant that is reported but carries no gradient.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nn, vmf
from .curve import (
    Curve,
    Srvf,
    from_srvf,
    inner,
    normalize_preshape,
    preshape_distance,
    to_srvf,
)
from .nn.optim import AdamState, adam_step, glorot_uniform
from .registration import (
    AntipodalPair,
    DegenerateCrossCovariance,
    optimal_rotation,
    slerp,
)


class GVaeError(ValueError):
    pass


class AntipodalLatents(GVaeError):
    pass


class FullMask(GVaeError):
    pass


class LengthMismatch(GVaeError):
    pass


class NotUnitNorm(GVaeError):
    pass


@dataclass
class GVaeModel:
    T: int
    l: int
    hidden: list
    kappa: float
    params: dict = field(default_factory=dict)
    reference: np.ndarray | None = None  # corpus frame used for rotation alignment
    length_scale: float = 1.0  # mean curve length of the training corpus
    latents: np.ndarray | None = None  # encodings of the training corpus

    def to_tensors(self) -> dict:
        out = {
            "config.kind": np.array(1.0),
            "config.T": np.array(float(self.T)),
            "config.l": np.array(float(self.l)),
            "config.hidden": np.array(self.hidden, dtype=float),
            "config.kappa": np.array(self.kappa),
            "config.length_scale": np.array(self.length_scale),
        }
        if self.reference is not None:
            out["config.reference"] = np.asarray(self.reference)
        if self.latents is not None:
            out["config.latents"] = np.asarray(self.latents)
        out.update({f"param.{k}": v for k, v in self.params.items()})
        return out

    @classmethod
    def from_tensors(cls, t: dict) -> "GVaeModel":
        if int(t.get("config.kind", -1)) != 1:
            raise GVaeError("checkpoint does not hold a G-VAE")
        return cls(
            T=int(t["config.T"]),
            l=int(t["config.l"]),
            hidden=[int(h) for h in np.atleast_1d(t["config.hidden"])],
            kappa=float(t["config.kappa"]),
            params={k[6:]: v.copy() for k, v in t.items() if k.startswith("param.")},
            reference=t.get("config.reference"),
            length_scale=float(t.get("config.length_scale", 1.0)),
            latents=t.get("config.latents"),
        )


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)  # corpus ELBO loss at the end of each epoch
    recon: list = field(default_factory=list)  # its reconstruction term
    batch_recon: list = field(default_factory=list)  # mean minibatch reconstruction during the epoch
    eval_recon: list = field(default_factory=list)  # deterministic (z = mu) reconstruction
    kl: float = 0.0
    wall_clock: list = field(default_factory=list)
    best_epoch: int = -1

    def to_json(self) -> dict:
        return {
            "loss": self.loss,
            "recon": self.recon,
            "batch_recon": self.batch_recon,
            "eval_recon": self.eval_recon,
            "kl": self.kl,
            "wall_clock": self.wall_clock,
            "best_epoch": self.best_epoch,
        }


def build(T: int = 143, l: int = 16, hidden=(512, 256), kappa: float | None = None, seed: int = 0) -> GVaeModel:
    """Fresh model; ``kappa`` has no default and must be chosen by the caller."""
    if kappa is None or not kappa >= 0:
        raise GVaeError("kappa must be given as a nonnegative number")
    if l < 2:
        raise GVaeError("latent dimension must be at least 2")
    if T < 4:
        raise GVaeError("grid size must be at least 4")
    rng = np.random.default_rng(seed)
    hidden = [int(h) for h in hidden]
    p = {}
    enc = [3 * T] + hidden + [l]
    for i, (a, b) in enumerate(zip(enc[:-1], enc[1:])):
        p[f"enc{i}.W"] = glorot_uniform(rng, (a, b), a, b)
        p[f"enc{i}.b"] = np.zeros(b)
    dec = [l] + hidden[::-1] + [3 * T]
    for i, (a, b) in enumerate(zip(dec[:-1], dec[1:])):
        p[f"dec{i}.W"] = glorot_uniform(rng, (a, b), a, b)
        p[f"dec{i}.b"] = np.zeros(b)
    return GVaeModel(T=T, l=l, hidden=hidden, kappa=float(kappa), params=p)


def _mlp(x, P, prefix, n_layers):
    for i in range(n_layers):
        x = nn.dense(x, P[f"{prefix}{i}.W"], P[f"{prefix}{i}.b"])
        if i < n_layers - 1:
            x = nn.relu(x)
    return x


def encode_graph(tape, model: GVaeModel, q: np.ndarray, P=None):
    P = P or tape.params_from(model.params, "enc")
    x = tape.const(q.reshape(len(q), -1))
    return nn.normalize_to_unit_sphere(_mlp(x, P, "enc", len(model.hidden) + 1), axis=-1)


def decode_graph(tape, model: GVaeModel, z, P=None):
    P = P or tape.params_from(model.params, "dec")
    out = _mlp(z, P, "dec", len(model.hidden) + 1)
    # unit discrete L2 norm: Euclidean norm sqrt(T)
    out = nn.scale(nn.normalize_to_unit_sphere(out, axis=-1), math.sqrt(model.T))
    return nn.reshape(out, (z.shape[0], model.T, 3))


def _as_batch(qs) -> np.ndarray:
    if isinstance(qs, Srvf):
        return qs.values[None]
    if isinstance(qs, np.ndarray):
        return qs[None] if qs.ndim == 2 else qs
    return np.stack([q.values if isinstance(q, Srvf) else np.asarray(q) for q in qs])


def encode(model: GVaeModel, q) -> np.ndarray:
    """Mean direction(s) on S^{l-1}; a single SRVF gives an (l,) vector."""
    batch = _as_batch(q)
    mu = encode_graph(nn.Tape(), model, batch).value
    return mu[0] if isinstance(q, Srvf) else mu


def decode(model: GVaeModel, z) -> Srvf | list:
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = z[None] if single else z
    if np.any(np.abs(np.linalg.norm(Z, axis=1) - 1.0) > 1e-6):
        raise NotUnitNorm("latent vectors must be unit norm")
    tape = nn.Tape()
    out = decode_graph(tape, model, tape.const(Z)).value
    qs = [Srvf(v) for v in out]
    return qs[0] if single else qs


def reconstruct(model: GVaeModel, q: Srvf) -> Srvf:
    return decode(model, encode(model, q))


def draw_noise(model: GVaeModel, batch_size: int, rng: np.random.Generator):
    """Reparameterization noise: the change magnitudes ``w`` and raw Gaussian
    directions; neither depends on the encoder output."""
    w = vmf.sample_w(model.l, model.kappa, rng, size=batch_size)
    eps = rng.standard_normal((batch_size, model.l))
    return w, eps


def _sample_graph(tape, mu, w: np.ndarray, eps: np.ndarray):
    """``z = w mu + sqrt(1 - w^2) v`` with ``v`` the unit tangent obtained by
    projecting the Gaussian direction off ``mu``."""
    e = tape.const(eps)
    along = nn.tensor_sum(e * mu, axis=1, keepdims=True)
    v = nn.normalize_to_unit_sphere(e - along * mu, axis=-1)
    wc = tape.const(w[:, None])
    sc = tape.const(np.sqrt(np.clip(1 - w * w, 0.0, None))[:, None])
    return wc * mu + sc * v


def elbo_graph(tape, model: GVaeModel, batch: np.ndarray, noise):
    P = tape.params_from(model.params)
    mu = encode_graph(tape, model, batch, P)
    z = _sample_graph(tape, mu, *noise)
    recon = decode_graph(tape, model, z, P)
    # l2_loss averages over the batch; 1/T turns the sum into the L2 quadrature
    rec = nn.scale(nn.l2_loss(recon, tape.const(batch)), 1.0 / model.T)
    return rec, mu, z


def elbo_loss(model: GVaeModel, batch, rng: np.random.Generator | None = None, noise=None, grads: bool = False):
    """Negative ELBO for a batch of preshape SRVFs.

    Returns ``(loss, parts)`` where parts holds ``recon``, ``kl`` and the
    latent vectors; with ``grads=True`` a parameter-gradient dict is appended.
    """
    batch = _as_batch(batch)
    if len(batch) == 0:
        raise GVaeError("empty batch")
    if noise is None:
        noise = draw_noise(model, len(batch), rng)
    tape = nn.Tape()
    rec, mu, z = elbo_graph(tape, model, batch, noise)
    kl = vmf.kl_to_uniform(model.l, model.kappa)
    recon = float(rec.value)
    parts = {"recon": recon, "kl": kl, "mu": mu.value, "z": z.value}
    loss = recon + kl
    if grads:
        return loss, parts, nn.backward(tape, rec)
    return loss, parts


def eval_recon(model: GVaeModel, data: np.ndarray) -> float:
    """Mean squared L2 reconstruction error with ``z = mu``."""
    tape = nn.Tape()
    mu = encode_graph(tape, model, data)
    out = decode_graph(tape, model, mu).value
    return float(np.mean(np.sum((out - data) ** 2, axis=(1, 2)) / model.T))


def train(
    model: GVaeModel,
    dataset,
    epochs: int = 200,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    lr_decay: bool = True,
    log=None,
) -> TrainHistory:
    """Adam over shuffled mini-batches.

    The recorded per-epoch loss is the corpus ELBO evaluated after the epoch
    with one noise draw that is frozen for the whole run, so successive
    entries differ only through the parameters.  The parameters of the epoch
    with the lowest loss are restored at the end.  With ``lr_decay`` the step
    size follows a cosine schedule down to 5% of ``lr``.
    """
    data = _as_batch(dataset)
    if len(data) == 0:
        raise GVaeError("empty dataset")
    rng = np.random.default_rng(seed)
    eval_noise = draw_noise(model, len(data), np.random.default_rng([seed, 1]))
    hist = TrainHistory(kl=vmf.kl_to_uniform(model.l, model.kappa))
    state = AdamState()
    params = dict(model.params)
    best = (math.inf, params)
    t0 = time.perf_counter()
    for epoch in range(epochs):
        step = lr
        if lr_decay and epochs > 1:
            step = lr * (0.05 + 0.95 * 0.5 * (1 + math.cos(math.pi * epoch / (epochs - 1))))
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for s in range(0, len(data), batch_size):
            idx = order[s : s + batch_size]
            model.params = params
            _, parts, g = elbo_loss(model, data[idx], rng, grads=True)
            total += parts["recon"] * len(idx)
            count += len(idx)
            if step:
                params = adam_step(params, g, state, step)
        model.params = params
        loss, parts = elbo_loss(model, data, noise=eval_noise)
        if not (math.isfinite(loss) and math.isfinite(total)):
            raise nn.NonFinite(f"training diverged at epoch {epoch}")
        hist.batch_recon.append(total / count)
        hist.recon.append(parts["recon"])
        hist.loss.append(loss)
        hist.eval_recon.append(eval_recon(model, data))
        hist.wall_clock.append(time.perf_counter() - t0)
        if hist.loss[-1] < best[0]:
            best = (hist.loss[-1], params)
            hist.best_epoch = epoch
        if log is not None:
            log(epoch, hist)
    model.params = best[1]
    return hist


# -- corpus handling -------------------------------------------------------


def align_to(reference: Srvf, q: Srvf):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateCrossCovariance)
        return optimal_rotation(reference, q)


def prepare_corpus(curves, reference: Srvf | None = None):
    """Preshape SRVFs rotated into the frame of ``reference`` (by default the
    first curve).  Returns ``(array (N, T, 3), reference, mean length)``."""
    qs = [normalize_preshape(to_srvf(c)) for c in curves]
    ref = reference or qs[0]
    out = np.stack([(align_to(ref, q).matrix @ q.values.T).T for q in qs])
    lengths = [c.length() for c in curves]
    return out, ref, float(np.mean(lengths))


def fit_corpus(model: GVaeModel, curves, reference: Srvf | None = None, **train_kw) -> TrainHistory:
    data, ref, length = prepare_corpus(curves, reference)
    model.reference = ref.values
    model.length_scale = length
    hist = train(model, data, **train_kw)
    model.latents = encode(model, data)
    return hist


def to_model_frame(model: GVaeModel, q: Srvf) -> Srvf:
    if model.reference is None:
        return q
    O = align_to(Srvf(model.reference), q)
    return Srvf(q.values @ O.matrix.T)


# -- generation ------------------------------------------------------------


def srvf_to_curve(model: GVaeModel, q: Srvf) -> Curve:
    return from_srvf(q * math.sqrt(model.length_scale))


def generate(model: GVaeModel, n: int, rng: np.random.Generator) -> list:
    """Curves decoded from latents drawn uniformly on S^{l-1}."""
    if n <= 0:
        return []
    z = vmf.sample_uniform_sphere(model.l, rng, n)
    return [srvf_to_curve(model, q) for q in decode(model, z)]


def generate_near(model: GVaeModel, q: Srvf, kappa_gen: float, n: int, rng: np.random.Generator) -> list:
    if n <= 0:
        return []
    mu = encode(model, q)
    z = vmf.sample(vmf.VmfParams(mu, kappa_gen), rng, size=n)
    return [srvf_to_curve(model, s) for s in decode(model, z)]


def nearest_distance(q: Srvf, corpus: np.ndarray) -> tuple:
    """Smallest rotation-aligned preshape angle from ``q`` to the corpus."""
    best = (math.inf, -1)
    for i, c in enumerate(corpus):
        cq = Srvf(c)
        O = align_to(q, cq)
        d = math.acos(max(-1.0, min(1.0, inner(q, Srvf(c @ O.matrix.T)))))
        if d < best[0]:
            best = (d, i)
    return best


def latent_geodesic(model: GVaeModel, q1: Srvf, q2: Srvf, steps: int):
    """Decoded great-circle path between the encodings of ``q1`` and ``q2``.

    Returns ``(srvfs, latents)``.
    """
    z1, z2 = encode(model, q1), encode(model, q2)
    try:
        zs = slerp(z1, z2, steps)
    except AntipodalPair as exc:
        raise AntipodalLatents(str(exc)) from exc
    zs = np.stack(zs)
    zs[0], zs[-1] = z1, z2
    path = decode(model, zs)
    # decode the ends on their own so they match reconstruct() bit for bit
    path[0], path[-1] = decode(model, z1), decode(model, z2)
    return path, zs


def path_length(qs) -> float:
    return float(sum(preshape_distance(a, b, tol=1e-6) for a, b in zip(qs[:-1], qs[1:])))


# -- inpainting ------------------------------------------------------------


def mask_atoms(mask_residues, n_atoms: int) -> np.ndarray:
    mask = np.zeros(n_atoms, dtype=bool)
    for r in mask_residues:
        if not 0 <= 3 * r < n_atoms:
            raise LengthMismatch(f"masked residue {r} outside a {n_atoms // 3}-residue fragment")
        mask[3 * r : 3 * r + 3] = True
    return mask


def _gaps(mask: np.ndarray) -> list:
    """Maximal runs of masked atoms as (start, stop) index pairs."""
    out, i, n = [], 0, len(mask)
    while i < n:
        if mask[i]:
            j = i
            while j < n and mask[j]:
                j += 1
            out.append((i, j))
            i = j
        else:
            i += 1
    return out


def linear_fill(points: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Masked atoms on the straight line between the flanking observed atoms.

    A terminal gap continues from its single flank along the mean observed
    bond vector near that end.
    """
    pts = np.array(points, dtype=float)
    n = len(pts)
    for a, b in _gaps(mask):
        if a > 0 and b < n:
            lo, hi = pts[a - 1], pts[b]
            for k in range(a, b):
                s = (k - a + 1) / (b - a + 1)
                pts[k] = (1 - s) * lo + s * hi
        elif a > 0:
            step = pts[a - 1] - pts[max(a - 4, 0)]
            step /= max(a - 1 - max(a - 4, 0), 1)
            for k in range(a, b):
                pts[k] = pts[a - 1] + (k - a + 1) * step
        elif b < n:
            step = pts[b] - pts[min(b + 3, n - 1)]
            step /= max(min(b + 3, n - 1) - b, 1)
            for k in range(b - 1, a - 1, -1):
                pts[k] = pts[b] + (b - k) * step
        else:
            raise FullMask("every atom is masked")
    return pts


def kabsch_fit(moving: np.ndarray, target: np.ndarray):
    """Rotation R and translation t minimizing ||R moving + t - target||."""
    mc, tc = moving.mean(axis=0), target.mean(axis=0)
    H = (moving - mc).T @ (target - tc)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, tc - R @ mc


def splice(observed: np.ndarray, decoded: np.ndarray, mask: np.ndarray, window: int = 9) -> np.ndarray:
    """Observed atoms verbatim; masked atoms from ``decoded``.

    For each gap the decoded curve is rigidly fitted to the observed atoms
    within ``window`` atoms of the gap, then bent linearly so that it meets
    the flanking observed atoms exactly.
    """
    out = np.array(observed, dtype=float)
    n = len(out)
    for a, b in _gaps(mask):
        idx = [i for i in range(max(0, a - window), min(n, b + window)) if not mask[i]]
        R, t = kabsch_fit(decoded[idx], observed[idx])
        placed = decoded @ R.T + t
        left = observed[a - 1] - placed[a - 1] if a > 0 else None
        right = observed[b] - placed[b] if b < n else None
        for k in range(a, b):
            if left is not None and right is not None:
                s = (k - a + 1) / (b - a + 1)
                corr = (1 - s) * left + s * right
            else:
                corr = left if left is not None else right
            out[k] = placed[k] + corr
    return out


def rmsd(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=1))))


def _points_graph(tape, model: GVaeModel, zt, length: float):
    """Curve points 1..T (point 0 at the origin) of the decoded SRVF."""
    T = model.T
    q = nn.reshape(decode_graph(tape, model, zt), (T, 3))
    speed = nn.sqrt(nn.tensor_sum(q * q, axis=1, keepdims=True))
    return nn.cumsum(nn.scale(q * speed, length / T), axis=0)


def _decoded_points(model: GVaeModel, Z: np.ndarray, length: float) -> np.ndarray:
    qs = np.stack([q.values for q in decode(model, Z)])
    steps = qs * np.linalg.norm(qs, axis=2, keepdims=True) * (length / model.T)
    return np.concatenate([np.zeros((len(qs), 1, 3)), np.cumsum(steps, axis=1)], axis=1)


def _rigid_residual(p: np.ndarray, y: np.ndarray) -> float:
    R, t = kabsch_fit(p, y)
    return float(np.mean(np.sum((p @ R.T + t - y) ** 2, axis=1)))


def inpaint(
    model: GVaeModel,
    corrupted: Curve,
    mask_residues,
    iters: int = 150,
    lr: float = 0.05,
    rng: np.random.Generator | None = None,
    window: int = 9,
    starts: int = 4,
    return_info: bool = False,
):
    """Complete the masked residues of ``corrupted`` by latent optimization.

    The masked atoms are first filled by :func:`linear_fill` and the filled
    curve is encoded.  That encoding and the training latents stored on the
    model are scored by how well their decodings fit the observed atoms
    within ``window`` atoms of each gap (after a rigid fit); the best
    ``starts`` of them seed a projected Adam search on S^{l-1} of the same
    squared-error objective.  The result keeps every observed atom and takes
    the masked atoms from the best decoding via :func:`splice`.
    ``rng`` is accepted for interface symmetry; the search is deterministic.
    """
    pts = corrupted.points
    if len(pts) != model.T + 1:
        raise LengthMismatch(f"model expects {model.T + 1} atoms, got {len(pts)}")
    mask = mask_atoms(mask_residues, len(pts))
    if mask.all():
        raise FullMask("every residue is masked")
    if not mask.any():
        return (Curve(pts), {"loss": 0.0, "baseline": pts.copy()}) if return_info else Curve(pts)
    n = len(pts)
    filled = linear_fill(pts, mask)
    obs_seg = ~(mask[:-1] | mask[1:])
    seg_len = np.linalg.norm(np.diff(filled, axis=0), axis=1)
    length = float(seg_len[obs_seg].mean() * model.T) if obs_seg.any() else Curve(filled).length()

    w = np.zeros(n)
    for a, b in _gaps(mask):
        w[max(0, a - window) : min(n, b + window)] = 1.0
    w[mask] = 0.0
    sel = w > 0
    if sel.sum() < 3:
        sel, w = ~mask, (~mask).astype(float)

    q_in = normalize_preshape(to_srvf(Curve(filled)))
    O = to_model_frame_rotation(model, q_in)
    mu = encode(model, Srvf(q_in.values @ O.T))
    cands = mu[None] if model.latents is None else np.vstack([mu[None], model.latents])
    P = _decoded_points(model, cands, length)
    scores = [_rigid_residual(p[sel], pts[sel]) for p in P]
    order = np.argsort(scores, kind="stable")[: max(1, starts)]

    best = (math.inf, None, None)
    for z in cands[order]:
        state = AdamState()
        for it in range(iters + 1):
            tape = nn.Tape()
            zt = tape.param("z", z[None])
            rel = _points_graph(tape, model, zt, length)
            full = np.vstack([np.zeros(3), rel.value])
            # the rigid placement is re-solved at every step and held fixed
            R, t = kabsch_fit(full[sel], pts[sel])
            placed = nn.concat([tape.const(np.zeros((1, 3))), rel], axis=0)
            moved = nn.dense(placed, tape.const(R.T)) + tape.const(t[None])
            d = (moved - tape.const(pts)) * tape.const(w[:, None])
            loss = nn.tensor_sum(d * d)
            val = float(loss.value) / sel.sum()
            if val < best[0]:
                best = (val, z, full)
            if it == iters:
                break
            g = nn.backward(tape, loss, wrt=[zt])[0][0]
            g = g - (g @ z) * z
            z = adam_step({"z": z}, {"z": g}, state, lr)["z"]
            z = z / np.linalg.norm(z)
    result = splice(pts, best[2], mask, window)
    if return_info:
        return Curve(result), {"loss": best[0], "baseline": filled, "latent": best[1]}
    return Curve(result)


def to_model_frame_rotation(model: GVaeModel, q: Srvf) -> np.ndarray:
    if model.reference is None:
        return np.eye(3)
    return align_to(Srvf(model.reference), q).matrix
