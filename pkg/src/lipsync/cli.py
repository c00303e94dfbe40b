"""Command line entry points: prepare | synth-data | train | infer | fit-jaw | render-maps | eval | plot-profile."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import facegeo, features, plotting, synthdata, tcn, training, windows
from .features import AudioFeatureSequence, MouthFeatureSequence
from .windows import RATE_RATIO, OverlapConfig

log = logging.getLogger("lipsync")

# file names inside prepared-data / checkpoint directories
MFCC_CSV = "mfcc.csv"
MOUTH_COORDS_CSV = "mouth_coords.csv"
MOUTH_FEATURES_CSV = "mouth_features.csv"
PCA_FILE = "pca.bin"
GEN_CKPT = "generator.tcn"
DISC_CKPT = "discriminator.tcn"
MODEL_JSON = "model.json"
LOG_CSV = "train_log.csv"


class CliError(Exception):
    pass


class Outputs:
    """Tracks written files so a failed command leaves nothing half-done behind."""

    def __init__(self):
        self.paths: list[Path] = []

    def add(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(path)
        return path

    def cleanup(self):
        for p in reversed(self.paths):
            if p.is_file():
                p.unlink()


def read_config(path) -> dict[str, str]:
    """``key = value`` lines; '#' starts a comment. Keys may use dashes or underscores."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise CliError(f"cannot read config {path}: {e.strerror}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise CliError(f"missing input: {p}")


def _overlap(args) -> OverlapConfig:
    return OverlapConfig(output_overlap=args.output_overlap)


def _load_audio(path) -> AudioFeatureSequence:
    """MFCCs from a WAV file or a previously written MFCC CSV."""
    _require(path)
    if str(path).lower().endswith(".wav"):
        pcm, sr = features.read_wav(path)
        return features.extract_mfcc(pcm, sr)
    return features.read_mfcc_csv(path)


def _load_generator(ckpt_dir):
    ckpt_dir = Path(ckpt_dir)
    _require(ckpt_dir / MODEL_JSON, ckpt_dir / GEN_CKPT)
    gen_cfg, _ = tcn.load_model_configs(ckpt_dir / MODEL_JSON)
    model = tcn.build_generator(gen_cfg)
    return tcn.load_checkpoint(model, ckpt_dir / GEN_CKPT)


def _model_configs(arch: str):
    if arch == "reduced":
        return tcn.GeneratorConfig.reduced(), tcn.DiscriminatorConfig.reduced()
    return tcn.GeneratorConfig(), tcn.DiscriminatorConfig()


# ---------------------------------------------------------------- commands


def cmd_prepare(args, out: Outputs):
    if args.audio is None and args.mfcc is None:
        raise CliError("prepare needs --audio or --mfcc")
    _require(args.landmarks, args.pca)
    audio = _load_audio(args.audio or args.mfcc)
    frames = features.read_landmark_csv(args.landmarks)
    bad = [f.frame_index for f in frames if not f.valid]
    if bad:
        raise CliError(f"{args.landmarks}: invalid landmarks in frames {bad[:5]}")
    n_video = min(len(frames), len(audio) // RATE_RATIO)
    if n_video < windows.WINDOW_VIDEO:
        raise CliError(f"inputs too short: {n_video} aligned video frames, need at least {windows.WINDOW_VIDEO}")
    audio = AudioFeatureSequence(audio.frames[: RATE_RATIO * n_video])
    coords = np.stack([features.normalize_landmarks(f, not args.no_scale_normalize) for f in frames[:n_video]])

    pca = features.load_pca(args.pca) if args.pca else features.fit_pca(coords, args.pca_dims)
    feats = features.pca_transform(pca, coords)

    d = Path(args.out)
    features.write_mfcc_csv(out.add(d / MFCC_CSV), audio)
    features.write_matrix_csv(out.add(d / MOUTH_COORDS_CSV), coords.reshape(n_video, -1), "p")
    features.save_pca(pca, out.add(d / PCA_FILE))
    features.write_mouth_csv(out.add(d / MOUTH_FEATURES_CSV), MouthFeatureSequence(feats))
    ratio = pca.explained_variance_ratio
    print(f"audio frames: {len(audio)}  video frames: {n_video}")
    print(f"pca components: {pca.n_components}  explained variance: {ratio.sum():.4f}")


def cmd_synth_data(args, out: Outputs):
    spec = synthdata.OracleSpec(
        mixing=synthdata.default_mixing(args.seed),
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    corpus = synthdata.generate_corpus(spec, args.minutes)
    d = Path(args.out)
    features.write_mfcc_csv(out.add(d / MFCC_CSV), corpus.audio)
    features.write_mouth_csv(out.add(d / MOUTH_FEATURES_CSV), corpus.mouth)
    features.write_matrix_csv(out.add(d / "truth.csv"), corpus.truth, "m")
    print(f"audio frames: {len(corpus.audio)}  video frames: {len(corpus.mouth)}  floor: {synthdata.oracle_floor(spec):.6g}")

    if args.faces:
        # speaking footage for fit-jaw plus a short non-speaking template clip
        rng = np.random.default_rng(args.seed)
        base = synthdata.default_template_placement()
        shapes = synthdata.random_mouth_shapes(args.faces, args.seed)
        speaking = []
        for i, (w, h) in enumerate(shapes):
            pl = features.Placement(base.nose + rng.normal(0, 3, 2), base.roll + rng.normal(0, 0.02), base.scale)
            speaking.append(synthdata.place_face(synthdata.synthetic_face(w, h), pl, i))
        features.write_landmark_csv(out.add(d / "faces" / "landmarks.csv"), speaking)
        tdir = d / "faces" / "templates"
        tmarks = []
        for i in range(args.template_frames):
            pl = features.Placement(base.nose + [2.0 * i, 0.0], base.roll, base.scale)
            img = synthdata.template_image(pl, seed=args.seed + i)
            facegeo.FacialMap(img).save_png(out.add(tdir / f"frame_{i:06d}.png"))
            tmarks.append(synthdata.place_face(synthdata.synthetic_face(), pl, i))
        features.write_landmark_csv(out.add(tdir / "landmarks.csv"), tmarks)
        print(f"faces: {args.faces} speaking frames, {args.template_frames} template frames")


def cmd_train(args, out: Outputs):
    d = Path(args.data)
    _require(d / MFCC_CSV, d / MOUTH_FEATURES_CSV)
    audio = features.read_mfcc_csv(d / MFCC_CSV)
    mouth = features.read_mouth_csv(d / MOUTH_FEATURES_CSV)
    windows.check_alignment(audio, mouth)
    validation = None
    if args.val_fraction > 0:
        corpus = synthdata.Corpus(audio, mouth, mouth.frames)
        (audio, mouth), validation = synthdata.split_corpus(corpus, args.val_fraction)
    train_windows = windows.make_training_windows(audio, mouth, args.train_hop)

    gen_cfg, disc_cfg = _model_configs(args.arch)
    gen = tcn.build_generator(gen_cfg, args.seed)
    disc = tcn.build_discriminator(disc_cfg, args.seed)
    cfg = training.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
        target_val_mse=args.target_val_mse,
    )
    weights = training.LossWeights(args.lambda1, args.lambda2)

    def progress(e):
        print(f"epoch {e.epoch:4d}  l2 {e.l2:.5f}  int {e.int:.5f}  g_gan {e.g_gan:.4f}  d {e.d_loss:.4f}  val_mse {e.val_mse:.5f}", flush=True)

    gen, history = training.train(gen, disc, train_windows, weights, cfg, validation, _overlap(args), progress)

    o = Path(args.out)
    tcn.save_model_configs(out.add(o / MODEL_JSON), gen_cfg, disc_cfg)
    tcn.save_checkpoint(gen, out.add(o / GEN_CKPT))
    tcn.save_checkpoint(disc, out.add(o / DISC_CKPT))
    training.write_training_log(out.add(o / LOG_CSV), history)
    if history and not args.no_plots:
        plotting.plot_training_log(history, out.add(o / "train_log.png"))
    print(f"trained {len(history)} epochs on {len(train_windows)} windows -> {o}")


def cmd_infer(args, out: Outputs):
    audio = _load_audio(args.audio)
    model = _load_generator(args.checkpoint)
    pred = training.predict_stream(model, audio, _overlap(args))
    features.write_mouth_csv(out.add(args.out), pred)
    print(f"{len(audio)} audio frames -> {len(pred)} mouth frames")


def cmd_fit_jaw(args, out: Outputs):
    _require(args.landmarks, args.reference)
    frames = features.read_landmark_csv(args.landmarks)
    faces = np.stack([features.normalize_face(f, not args.no_scale_normalize) for f in frames])
    reference = None
    if args.reference:
        ref = features.read_landmark_csv(args.reference)[0]
        reference = features.normalize_face(ref, not args.no_scale_normalize)[features.JAW_SLICE]
    reg = facegeo.fit_jaw(facegeo.jaw_samples_from_faces(faces, reference))
    facegeo.save_jaw(reg, out.add(args.out))
    print(f"fitted jaw regression on {len(frames)} frames")


def cmd_render_maps(args, out: Outputs):
    _require(args.mouth, args.templates, args.jaw, args.pca)
    tdir = Path(args.templates)
    marks = Path(args.template_landmarks) if args.template_landmarks else tdir / "landmarks.csv"
    _require(marks)
    templates = facegeo.load_templates(tdir, marks, args.canny_low, args.canny_high)
    mouth = features.read_mouth_csv(args.mouth)
    if len(templates) < len(mouth) and not args.cycle:
        raise CliError(f"missing template frames: {len(templates)} templates for {len(mouth)} mouth frames (use --cycle)")
    reg = facegeo.load_jaw(args.jaw)
    pca = features.load_pca(args.pca)
    if pca.n_components != mouth.frames.shape[1]:
        raise CliError(f"{args.mouth}: {mouth.frames.shape[1]} columns but PCA model has {pca.n_components} components")
    o = Path(args.out)
    for i, f in enumerate(mouth.frames):
        t = templates[i % len(templates)]
        fmap = facegeo.compose_map(t, f, reg, pca, scale_normalize=not args.no_scale_normalize)
        fmap.save_png(out.add(o / f"frame_{i:06d}.png"))
        if args.overlay:
            img = plotting.overlay(t.image, fmap.raster)
            facegeo.FacialMap(img).save_png(out.add(o / "overlay" / f"frame_{i:06d}.png"))
    print(f"rendered {len(mouth)} facial maps -> {o}")


def cmd_eval(args, out: Outputs):
    _require(args.pred, args.target)
    pred = features.read_matrix_csv(args.pred)
    target = features.read_matrix_csv(args.target)
    if pred.shape != target.shape:
        raise CliError(f"length mismatch: prediction {pred.shape} vs target {target.shape}")
    report = training.evaluate(target, pred)
    training.write_metrics_csv(out.add(args.out), report)
    print(f"mse {report.mse:.6g}  mae {report.mae:.6g}  int_mse {report.int_mse:.6g}")


def cmd_plot_profile(args, out: Outputs):
    audio = _load_audio(args.audio)
    _require(args.mouth)
    mouth = features.read_mouth_csv(args.mouth)
    n = min(len(mouth), len(audio) // RATE_RATIO)
    audio = AudioFeatureSequence(audio.frames[: RATE_RATIO * n])
    mouth = MouthFeatureSequence(mouth.frames[:n])
    model = _load_generator(args.checkpoint)
    test = windows.make_training_windows(audio, mouth, args.hop)
    profile = training.per_frame_error_profile(model, test)
    o = Path(args.out)
    features.write_matrix_csv(out.add(o / "profile.csv"), profile[:, None], "mse")
    plotting.plot_error_profile(profile, out.add(o / "profile.png"))
    head, tail, mid = profile[:4].mean(), profile[-8:].mean(), profile[10:40].mean()
    print(f"{len(test)} windows  head {head:.5f}  interior {mid:.5f}  tail {tail:.5f}")


# ------------------------------------------------------------------ parser


def _add_common(p):
    p.add_argument("--config", help="key = value file; command line flags take precedence")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_overlap(p):
    p.add_argument("--output-overlap", type=int, default=10, help="frames dropped at each interior window edge")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lipsync", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="MFCC + normalized mouth + PCA features from audio and landmarks")
    _add_common(p)
    p.add_argument("--audio", help="WAV file")
    p.add_argument("--mfcc", help="precomputed MFCC CSV instead of --audio")
    p.add_argument("--landmarks", required=True, help="68-point landmark CSV, one row per video frame")
    p.add_argument("--pca", help="reuse an existing PCA model instead of fitting one")
    p.add_argument("--pca-dims", type=int, default=10)
    p.add_argument("--no-scale-normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth-data", help="synthetic audio/mouth corpus with a known oracle")
    _add_common(p)
    p.add_argument("--minutes", type=float, default=10.0)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--faces", type=int, default=0, help="also write this many synthetic speaking landmark frames")
    p.add_argument("--template-frames", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="adversarial training of the audio-to-mouth TCN")
    _add_common(p)
    _add_overlap(p)
    p.add_argument("--data", required=True, help="directory with mfcc.csv and mouth_features.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lambda1", type=float, default=100.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--train-hop", type=int, default=windows.DEFAULT_TRAIN_HOP)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--target-val-mse", type=float, default=0.0, help="stop early once reached (0 disables)")
    p.add_argument("--arch", choices=["full", "reduced"], default="full")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict a full-length mouth feature sequence")
    _add_common(p)
    _add_overlap(p)
    p.add_argument("--audio", required=True, help="WAV file or MFCC CSV")
    p.add_argument("--checkpoint", required=True, help="directory written by train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("fit-jaw", help="jaw-from-mouth-shape regression from speaking footage")
    _add_common(p)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--reference", help="landmark CSV whose first row gives the reference jaw (default: per-video mean)")
    p.add_argument("--no-scale-normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_jaw)

    p = sub.add_parser("render-maps", help="facial maps (PNG) for a mouth feature sequence")
    _add_common(p)
    p.add_argument("--mouth", required=True, help="mouth feature CSV")
    p.add_argument("--templates", required=True, help="directory of 512x512 template frames")
    p.add_argument("--template-landmarks", help="landmark CSV for the templates (default: <templates>/landmarks.csv)")
    p.add_argument("--jaw", required=True)
    p.add_argument("--pca", required=True)
    p.add_argument("--canny-low", type=float, default=50.0)
    p.add_argument("--canny-high", type=float, default=150.0)
    p.add_argument("--cycle", action="store_true", help="reuse template frames when there are fewer than mouth frames")
    p.add_argument("--overlay", action="store_true", help="also write debug overlays on the template frames")
    p.add_argument("--no-scale-normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render_maps)

    p = sub.add_parser("eval", help="MSE / MAE / Int-MSE between two feature CSVs")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot-profile", help="per-position MSE over the 50-frame output window")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", required=True, help="WAV file or MFCC CSV")
    p.add_argument("--mouth", required=True, help="ground-truth mouth feature CSV")
    p.add_argument("--hop", type=int, default=windows.WINDOW_VIDEO, help="video-frame hop between test windows")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_profile)
    return parser


def _apply_config(parser, argv):
    """Config values become subcommand defaults, so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    target = sub.choices.get(known.command)
    if target is None:
        return
    dests = {a.dest for a in target._actions}
    unknown = sorted(set(values) - dests)
    if unknown:
        raise CliError(f"{known.config}: unknown keys for '{known.command}': {', '.join(unknown)}")
    for a in target._actions:
        if a.dest in values:
            v = values[a.dest]
            if isinstance(a, argparse._StoreTrueAction):
                v = v.lower() in ("1", "true", "yes", "on")
            target.set_defaults(**{a.dest: v})
            a.required = False


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if hasattr(args, "pca_dims") and not 1 <= args.pca_dims <= 40:
        print("error: --pca-dims must lie in [1, 40]", file=sys.stderr)
        return 2

    import torch

    torch.manual_seed(args.seed)
    out = Outputs()
    try:
        args.func(args, out)
    except (CliError, ValueError, OSError, training.TrainingDiverged) as e:
        out.cleanup()
        print(f"error: {e}", file=sys.stderr)
        return 1
    except BaseException:
        out.cleanup()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
