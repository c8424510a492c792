"""Command-line front end.

Every command writes its outputs, a figure where one makes sense, and a
``run_manifest.json`` (config, inputs, artifact hashes) into ``--output-dir``.
Exit codes: 0 success, 1 hard error, 2 success with an empty result.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, gvae, io, pdb_ingest, plotting, registration, resnet_warp, synthetic, vmf
from .curve import Curve, CurveError, Srvf, from_srvf, normalize_preshape, preshape_distance, to_srvf
from .nn.checkpoint import CheckpointError, load, save

log = logging.getLogger("protshape")

EXIT_OK, EXIT_ERROR, EXIT_EMPTY = 0, 1, 2


class CliError(Exception):
    pass


class Run:
    """Output directory, seeded generator and manifest bookkeeping."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.rng = np.random.default_rng(args.seed)
        self.inputs = []
        self.artifacts = []
        self.notes = {}

    def path(self, name: str) -> Path:
        p = self.out / name
        self.artifacts.append(p)
        return p

    def add_input(self, p):
        self.inputs.append(Path(p))

    def manifest(self, status: int):
        config = {k: v for k, v in vars(self.args).items() if k != "func"}
        body = {
            "command": self.args.command,
            "version": __version__,
            "config": config,
            "inputs": [{"path": str(p), "sha256": io.sha256_file(p)} for p in self.inputs if p.is_file()],
            "artifacts": [{"path": p.name, "sha256": io.sha256_file(p)} for p in self.artifacts if p.exists()],
            "exit_code": status,
            **self.notes,
        }
        io.write_json(self.out / "run_manifest.json", body)


# -- input helpers ---------------------------------------------------------


def _expand(paths, suffixes) -> list:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(f for f in p.iterdir() if f.suffix.lower() in suffixes))
        elif p.exists():
            out.append(p)
        else:
            raise CliError(f"{p}: no such file or directory")
    return out


def _read_curve(path: Path) -> Curve:
    if path.suffix.lower() == ".pdb":
        records = pdb_ingest.parse_pdb(path.read_text())
        chain = pdb_ingest.extract_backbone(records, pdb_ingest.chains_in(records)[0])
        return Curve(chain.coords)
    return io.read_curve_csv(path)


def _load_curves(run: Run, paths) -> tuple:
    files = _expand(paths, {".csv", ".pdb"})
    curves = []
    for f in files:
        run.add_input(f)
        curves.append(_read_curve(f))
    return [f.stem for f in files], curves


def _preshape(curves) -> list:
    return [normalize_preshape(to_srvf(c)) for c in curves]


def _load_model(run: Run, path) -> gvae.GVaeModel:
    if path is None:
        raise CliError("this command needs --checkpoint")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{p}: checkpoint not found")
    run.add_input(p)
    return gvae.GVaeModel.from_tensors(load(p))


def _parse_mask(text: str, n_res: int, rng: np.random.Generator) -> list:
    """``"10"`` masks a random contiguous run of 10 residues; ``"3-12,20"``
    lists residues (0-based) explicitly."""
    if any(c in text for c in "-,"):
        out = []
        for part in text.split(","):
            a, _, b = part.partition("-")
            out.extend(range(int(a), int(b or a) + 1))
        return sorted(set(out))
    k = int(text)
    if k <= 0:
        return []
    if k >= n_res:
        raise CliError(f"cannot mask {k} of {n_res} residues")
    start = int(rng.integers(0, n_res - k + 1))
    return list(range(start, start + k))


# -- commands --------------------------------------------------------------


def cmd_ingest(run: Run) -> int:
    a = run.args
    files = _expand(a.input, {".pdb", ".ent"})
    index, failures = [], []
    for f in files:
        run.add_input(f)
        try:
            records = pdb_ingest.parse_pdb(f.read_text())
            chains = [a.chain] if a.chain else pdb_ingest.chains_in(records)
            for ch in chains:
                bb = pdb_ingest.extract_backbone(records, ch)
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    frags = pdb_ingest.fragments_with_info(bb, str(f), a.fragment_atoms, a.stride, stem=f.stem)
                for w in caught:
                    log.warning("%s: %s", f, w.message)
                for info in frags:
                    io.write_curve_csv(run.path(f"{info.fragment_id}.csv"), info.curve)
                    index.append([info.fragment_id, info.source, info.chain, info.first_residue, info.last_residue, info.start_atom])
        except (pdb_ingest.PdbError, OSError, UnicodeDecodeError) as exc:
            log.warning("%s: %s", f, exc)
            failures.append({"path": str(f), "error": str(exc)})
    if failures and len(failures) == len(files):
        run.notes["failures"] = failures
        for fail in failures:
            print(f"error: {fail['path']}: {fail['error']}", file=sys.stderr)
        return EXIT_ERROR
    with open(run.path("fragments.csv"), "w") as fh:
        fh.write("fragment_id,source,chain,first_residue,last_residue,start_atom\n")
        for row in index:
            fh.write(",".join(map(str, row)) + "\n")
    run.notes["failures"] = failures
    run.notes["n_fragments"] = len(index)
    print(f"{len(index)} fragments from {len(files) - len(failures)} file(s)")
    return EXIT_OK if index else EXIT_EMPTY


def cmd_synth(run: Run) -> int:
    a = run.args
    curves = synthetic.synthetic_fragments(a.n, run.rng, n_res=a.n_res, kinds=tuple(a.kinds))
    for i, c in enumerate(curves):
        io.write_curve_csv(run.path(f"synth_{i:05d}.csv"), c)
    print(f"{len(curves)} synthetic fragments")
    return EXIT_OK if curves else EXIT_EMPTY


def cmd_distance(run: Run) -> int:
    a = run.args
    names, curves = _load_curves(run, a.input)
    if not curves:
        return EXIT_EMPTY
    qs = _preshape(curves)
    if len({q.grid_size for q in qs}) > 1:
        raise CliError("fragments have different lengths")
    kw = {}
    if a.method == "dp":
        kw["grid"] = registration.DpGrid(a.dp_grid)
    elif a.method == "resnet":
        kw["config"] = {"epochs": a.epochs, "lr": a.lr, "seed": a.seed}
    D = registration.distance_matrix(qs, a.method, **kw)
    io.write_matrix_csv(run.path("distances.csv"), names, D)
    plotting.distance_heatmap(run.path("distances.png"), D, names, title=f"{a.method} distance")
    return EXIT_OK


def cmd_geodesic(run: Run) -> int:
    a = run.args
    names, curves = _load_curves(run, a.input)
    if len(curves) != 2:
        raise CliError("geodesic needs exactly two fragments")
    q1, q2 = _preshape(curves)
    report = {"space": a.space, "inputs": names}
    if a.space == "preshape":
        path = registration.geodesic_path(q1, q2, a.steps)
    elif a.space == "shape":
        res = registration.register(q1, q2, registration.DpGrid(a.dp_grid))
        path = registration.geodesic_path(q1, normalize_preshape(res.q2_star), a.steps)
        report["theta"] = res.theta
    else:
        model = _load_model(run, a.checkpoint)
        q1m, q2m = gvae.to_model_frame(model, q1), gvae.to_model_frame(model, q2)
        path, zs = gvae.latent_geodesic(model, q1m, q2m, a.steps)
        report["latents"] = zs
        report["latent_norms"] = np.linalg.norm(zs, axis=1)
    chords = [preshape_distance(x, y) for x, y in zip(path[:-1], path[1:])]
    report["chord_distances"] = chords
    report["accumulated_length"] = np.cumsum([0.0] + chords)
    report["end_to_end"] = preshape_distance(path[0], path[-1])
    scale = [c.length() for c in curves]
    pts = [from_srvf_scaled(q, scale[0] + (scale[1] - scale[0]) * k / max(len(path) - 1, 1)) for k, q in enumerate(path)]
    report["curves"] = pts
    io.write_json(run.path("geodesic.json"), report)
    plotting.curve_path(run.path("geodesic.png"), pts, title=f"{a.space} geodesic")
    return EXIT_OK


def from_srvf_scaled(q: Srvf, length: float) -> np.ndarray:
    return from_srvf(q * math.sqrt(length)).points


def cmd_register(run: Run) -> int:
    a = run.args
    names, curves = _load_curves(run, a.input)
    if len(curves) != 2:
        raise CliError("register needs exactly two fragments")
    q1, q2 = _preshape(curves)
    grid = registration.DpGrid(a.dp_grid)
    if a.method == "dp":
        res = registration.register(q1, q2, grid)
        report = {"method": "dp", "theta": res.theta, "cost": res.cost, "rotation": res.rotation.matrix, "warp": res.warp.values}
        warps = {"dp": res.warp.values}
    else:
        cfg = {"epochs": a.epochs, "lr": a.lr, "seed": a.seed}
        fit = resnet_warp.compare_with_dp(cfg, q1, q2, grid)
        report = {"method": "resnet", **fit.to_json()}
        warps = {"resnet": fit.warp.values, "dp": fit.comparison["dp_warp"]}
    report["inputs"] = names
    io.write_json(run.path("registration.json"), report)
    plotting.warp_comparison(run.path("warp.png"), warps)
    return EXIT_OK


def cmd_train(run: Run) -> int:
    a = run.args
    names, curves = _load_curves(run, a.input)
    if not curves:
        return EXIT_EMPTY
    T = curves[0].n - 1
    if any(c.n - 1 != T for c in curves):
        raise CliError("fragments have different lengths")
    model = gvae.build(T=T, l=a.latent_dim, hidden=a.hidden, kappa=a.kappa, seed=a.seed)
    hist = gvae.fit_corpus(model, curves, epochs=a.epochs, batch_size=a.batch_size, lr=a.lr, seed=a.seed, lr_decay=not a.no_lr_decay)
    save(run.path("model.gvae"), model.to_tensors())
    io.write_json(run.path("history.json"), hist.to_json())
    plotting.loss_history(run.path("loss.png"), hist.to_json())
    print(f"final loss {hist.loss[-1]:.6f} (best epoch {hist.best_epoch})")
    return EXIT_OK


def cmd_generate(run: Run) -> int:
    a = run.args
    model = _load_model(run, a.checkpoint)
    corpus = None
    if a.input:
        _, curves = _load_curves(run, a.input)
        corpus, _, _ = gvae.prepare_corpus(curves, Srvf(model.reference) if model.reference is not None else None)
    if a.near is not None:
        q = gvae.to_model_frame(model, _preshape([_read_curve(Path(a.near))])[0])
        run.add_input(a.near)
        out = gvae.generate_near(model, q, a.kappa, a.n, run.rng)
    else:
        out = gvae.generate(model, a.n, run.rng)
    rows = []
    for i, c in enumerate(out):
        io.write_curve_csv(run.path(f"gen_{i:04d}.csv"), c)
        if c.n % 3 == 0:
            run.path(f"gen_{i:04d}.pdb").write_text(io.backbone_pdb(c.points))
        if corpus is not None:
            d, j = gvae.nearest_distance(normalize_preshape(to_srvf(c)), corpus)
            rows.append((f"gen_{i:04d}", d, j))
    if corpus is not None:
        with open(run.path("novelty.csv"), "w") as fh:
            fh.write("sample,nearest_distance,nearest_index\n")
            for r in rows:
                fh.write(f"{r[0]},{r[1]:.10g},{r[2]}\n")
    if out:
        plotting.curve_path(run.path("generated.png"), [c.points for c in out[:8]], title="generated")
    print(f"{len(out)} samples")
    return EXIT_OK if out else EXIT_EMPTY


def cmd_inpaint(run: Run) -> int:
    a = run.args
    model = _load_model(run, a.checkpoint)
    names, curves = _load_curves(run, a.input)
    if not curves:
        return EXIT_EMPTY
    report = {}
    for name, c in zip(names, curves):
        mres = _parse_mask(a.mask_residues, c.n // 3, run.rng)
        mask = gvae.mask_atoms(mres, c.n)
        out, info = gvae.inpaint(model, c, mres, iters=a.iters, lr=a.lr, rng=run.rng, return_info=True)
        entry = {"mask_residues": mres, "objective": info["loss"]}
        if mask.any():
            entry["model"] = gvae.rmsd(out.points[mask], c.points[mask])
            entry["linear"] = gvae.rmsd(info["baseline"][mask], c.points[mask])
        report[name] = entry
        io.write_curve_csv(run.path(f"{name}_inpainted.csv"), out)
        run.path(f"{name}_inpainted.pdb").write_text(io.backbone_pdb(out.points))
    io.write_json(run.path("inpaint_report.json"), report)
    scored = {k: v for k, v in report.items() if "model" in v}
    if scored:
        plotting.rmsd_bars(run.path("inpaint_rmsd.png"), dict(list(scored.items())[:20]))
    return EXIT_OK


def cmd_vmf_sample(run: Run) -> int:
    a = run.args
    m = a.latent_dim
    mu = np.zeros(m)
    mu[0] = 1.0
    if a.mu:
        mu = np.array([float(v) for v in a.mu.split(",")])
        if len(mu) != m:
            raise CliError(f"--mu has {len(mu)} entries, expected {m}")
    p = vmf.VmfParams(mu / np.linalg.norm(mu), a.kappa)
    if a.n <= 0:
        return EXIT_EMPTY
    z = vmf.sample(p, run.rng, size=a.n)
    np.savetxt(run.path("samples.csv"), z, delimiter=",", header=",".join(f"z{i}" for i in range(m)), comments="")
    w = z @ p.mu
    summary = {
        "m": m,
        "kappa": a.kappa,
        "n": a.n,
        "mean_w": float(w.mean()),
        "mean_w_stderr": float(w.std(ddof=1) / math.sqrt(a.n)) if a.n > 1 else None,
        "mean_resultant_length": vmf.mean_resultant_length(m, a.kappa),
        "kl_to_uniform": vmf.kl_to_uniform(m, a.kappa),
        "log_normalizer": vmf.log_normalizer(m, a.kappa),
    }
    io.write_json(run.path("summary.json"), summary)

    logc = vmf.log_normalizer(m, a.kappa)
    log_area = vmf.log_sphere_area(m - 1)

    def density_w(t):
        # marginal of w: C exp(kappa w) (1 - w^2)^((m-3)/2) |S^{m-2}|
        return np.exp(logc + a.kappa * t + log_area + 0.5 * (m - 3) * np.log(np.clip(1 - t * t, 1e-300, None)))

    plotting.vmf_samples(run.path("samples.png"), z, p.mu, a.kappa, density_w)
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="protshape", description="Elastic shape analysis and generation of protein backbones.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        p.add_argument("--input", nargs="+" if needs_input else "*", required=needs_input, default=[])
        p.add_argument("--output-dir", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = common(sub.add_parser("ingest", help="PDB files -> 144-atom backbone fragments"))
    p.add_argument("--chain", default=None)
    p.add_argument("--fragment-atoms", type=int, default=144)
    p.add_argument("--stride", type=int, default=3)
    p.set_defaults(func=cmd_ingest)

    p = common(sub.add_parser("synth", help="synthetic protein-like fragments"), needs_input=False)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--n-res", type=int, default=48)
    p.add_argument("--kinds", default="HE", help="segment kinds: H helix, E strand, L loop")
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("distance", help="pairwise shape distance matrix"))
    p.add_argument("--method", choices=["dp", "resnet", "preshape"], default="dp")
    p.add_argument("--dp-grid", type=int, default=50)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.set_defaults(func=cmd_distance)

    p = common(sub.add_parser("geodesic", help="geodesic between two fragments"))
    p.add_argument("--space", choices=["preshape", "shape", "latent"], default="shape")
    p.add_argument("--steps", type=int, default=7)
    p.add_argument("--dp-grid", type=int, default=50)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_geodesic)

    p = common(sub.add_parser("register", help="register the second fragment to the first"))
    p.add_argument("--method", choices=["dp", "resnet"], default="resnet")
    p.add_argument("--dp-grid", type=int, default=50)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.set_defaults(func=cmd_register)

    p = common(sub.add_parser("train", help="train the geometric VAE"))
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--hidden", type=int, nargs="+", default=[512, 256])
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--no-lr-decay", action="store_true")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("generate", help="decode latent samples to backbones"), needs_input=False)
    p.add_argument("--checkpoint")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--near", help="fragment whose encoding centers a vMF(kappa) draw")
    p.add_argument("--kappa", type=float, default=10.0)
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("inpaint", help="complete masked residues"))
    p.add_argument("--checkpoint")
    p.add_argument("--mask-residues", default="10", help="a count (random contiguous run) or a list like 3-12,20")
    p.add_argument("--iters", type=int, default=150)
    p.add_argument("--lr", type=float, default=0.05)
    p.set_defaults(func=cmd_inpaint)

    p = common(sub.add_parser("vmf-sample", help="draw von Mises-Fisher samples"), needs_input=False)
    p.add_argument("--latent-dim", "--m", dest="latent_dim", type=int, default=3)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--mu", help="comma-separated mean direction (normalized)")
    p.set_defaults(func=cmd_vmf_sample)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run = Run(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        status = args.func(run)
    except (CliError, CurveError, CheckpointError, gvae.GVaeError, pdb_ingest.PdbError, registration.RegistrationError, vmf.VmfError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_ERROR
    run.manifest(status)
    return status


if __name__ == "__main__":
    sys.exit(main())
