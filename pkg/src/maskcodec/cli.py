"""Command-line front end: codebook training, encode/decode, evaluation
reports, channel profiling, and the weights manifest.

Exit codes: 0 success, 2 configuration/usage error, 3 data error,
4 format error. Set LC_LOG=debug for verbose logging.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import sys
from fractions import Fraction
from pathlib import Path

import click
import numpy as np
import yaml

from . import bitstream, dsp, losses, nets, quantizer
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    MaskCodecError,
    ShapeError,
    UnsupportedError,
    WeightsError,
)

log = logging.getLogger("maskcodec")

EXIT_CODES = {
    ConfigError: 2,
    UnsupportedError: 2,
    DataError: 3,
    ShapeError: 3,
    WeightsError: 3,
    FormatError: 4,
}

TARGET_SR = 24_000


def _exit_code(err: MaskCodecError) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(err, cls):
            return code
    return 1


def _setup_logging():
    level = os.environ.get("LC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


DEFAULT_CONFIG = {
    "stft": {"n_fft": 1280, "hop": 320},
    "mel": {"n_mels": 100, "f_min": 0.0, "f_max": 12000.0, "log_eps": 1e-5},
    "mcrvq": {"n_total": 8, "n_parallel": 3, "codebook_size": 1024, "dim": 512},
    "decoder": {
        "hidden_dim": 512,
        "intermediate_dim": 1536,
        "n_convnext_blocks": 8,
        "n_heads": 8,
    },
    "train": {
        "kmeans_iters": 25,
        "ema_epochs": 10,
        "ema_decay": 0.99,
        "reseed_threshold": 1.0,
    },
    "loss_weights": {"quantizer": 1.0, "mel": 45.0, "adversarial": 1.0, "feature": 2.0},
    "seed": 0,
}


def load_run_config(path: str | None) -> dict:
    """Merge a YAML config file over the defaults (flags override later)."""
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path:
        try:
            with open(path) as fh:
                user = yaml.safe_load(fh) or {}
        except OSError as err:
            raise ConfigError(f"cannot read config file {path}: {err}") from err
        except yaml.YAMLError as err:
            raise ConfigError(f"malformed config file {path}: {err}") from err
        if not isinstance(user, dict):
            raise ConfigError("config file must contain a mapping")
        for section, values in user.items():
            if isinstance(values, dict) and isinstance(cfg.get(section), dict):
                cfg[section].update(values)
            else:
                cfg[section] = values
    return cfg


def _stft_cfg(cfg):
    return dsp.StftConfig(n_fft=cfg["stft"]["n_fft"], hop=cfg["stft"]["hop"])


def _mel_cfg(cfg):
    return dsp.MelConfig(**cfg["mel"])


def _mcrvq_cfg(cfg, dim=None):
    params = dict(cfg["mcrvq"])
    if dim is not None:
        params["dim"] = dim
    return quantizer.McrvqConfig(**params)


def _schedule(cfg):
    return quantizer.TrainSchedule(seed=cfg["seed"], **cfg["train"])


def _decoder_cfg(cfg, in_dim):
    return nets.DecoderConfig(
        in_dim=in_dim, n_fft=cfg["stft"]["n_fft"], **cfg["decoder"]
    )


# --- WAV I/O ---------------------------------------------------------------

def read_wav(path: str, resample_to: int | None = TARGET_SR) -> dsp.AudioBuffer:
    from scipy.io import wavfile

    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    except ValueError as err:
        raise FormatError(f"{path} is not a readable WAV file: {err}") from err
    if data.ndim != 1:
        raise DataError(f"{path} has {data.shape[1]} channels; mono required")
    if np.issubdtype(data.dtype, np.integer):
        scale = float(max(-np.iinfo(data.dtype).min, np.iinfo(data.dtype).max))
        samples = data.astype(np.float64) / scale
    else:
        samples = data.astype(np.float64)
    if resample_to and rate != resample_to:
        samples = resample(samples, rate, resample_to)
        rate = resample_to
    return dsp.AudioBuffer(samples, sample_rate=rate)


def resample(samples: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    """Polyphase windowed-sinc resampling (Kaiser-windowed lowpass)."""
    from scipy.signal import resample_poly

    frac = Fraction(dst_rate, src_rate)
    log.info("resampling %d Hz -> %d Hz", src_rate, dst_rate)
    return resample_poly(samples, frac.numerator, frac.denominator)


def write_wav(path: str, audio: dsp.AudioBuffer) -> None:
    from scipy.io import wavfile

    samples = audio.samples
    peak = float(np.max(np.abs(samples))) if len(samples) else 0.0
    if peak > 1.0:
        log.warning("peak %.3f exceeds [-1, 1]; normalizing", peak)
        samples = samples / peak
    pcm = np.clip(np.round(samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, audio.sample_rate, pcm)


def _load_latent_corpus(path: str) -> np.ndarray:
    try:
        arr = np.load(path)
    except (OSError, ValueError) as err:
        raise DataError(f"cannot load latent corpus {path}: {err}") from err
    if arr.ndim != 2:
        raise DataError(f"latent corpus must be 2-D (frames, dim), got {arr.shape}")
    return np.asarray(arr, dtype=np.float64)


def _corpus_from_inputs(latents, audio_dir, weights, cfg) -> np.ndarray:
    if latents:
        return _load_latent_corpus(latents)
    if not audio_dir:
        raise ConfigError("provide either --latents or --audio-dir")
    if not weights:
        raise ConfigError("--audio-dir requires --weights to run the encoder")
    paths = sorted(Path(audio_dir).glob("*.wav"))
    if not paths:
        raise DataError(f"no WAV files in {audio_dir}")
    bundle = nets.load_weights(Path(weights).read_bytes())
    chunks = [
        nets.encoder_forward(read_wav(str(p)), bundle) for p in paths
    ]
    return np.concatenate(chunks, axis=0).astype(np.float64)


# --- commands --------------------------------------------------------------

@click.group()
def main():
    """Neural audio codec: masked-channel residual VQ over a learned latent."""
    _setup_logging()


def _wrap(fn):
    try:
        fn()
    except MaskCodecError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(_exit_code(err))


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--init-random", "out_path", type=click.Path(), default=None,
              help="Write randomly initialized weights to this LCWT file.")
@click.option("--seed", type=int, default=None)
def manifest(config_path, out_path, seed):
    """Print expected weight names/shapes; optionally emit random weights."""

    def run():
        cfg = load_run_config(config_path)
        enc = nets.EncoderConfig(out_dim=cfg["mcrvq"]["dim"])
        dec = _decoder_cfg(cfg, cfg["mcrvq"]["dim"])
        for name, shape in nets.weight_manifest(enc, dec):
            click.echo(f"{name}\t{'x'.join(map(str, shape))}")
        if out_path:
            bundle = nets.init_random_weights(
                enc, dec, seed=cfg["seed"] if seed is None else seed
            )
            Path(out_path).write_bytes(nets.save_weights(bundle))
            click.echo(f"wrote {out_path}")

    _wrap(run)


@main.command("train-codebooks")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--latents", type=click.Path(), default=None,
              help="Latent corpus as a 2-D .npy array.")
@click.option("--audio-dir", type=click.Path(), default=None,
              help="Directory of WAV files to encode into a corpus.")
@click.option("--weights", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("-o", "--output", type=click.Path(), required=True)
def train_codebooks_cmd(config_path, latents, audio_dir, weights, seed, output):
    """Train MCRVQ codebooks and write them as an LCCB file."""

    def run():
        cfg = load_run_config(config_path)
        if seed is not None:
            cfg["seed"] = seed
        corpus = _corpus_from_inputs(latents, audio_dir, weights, cfg)
        mcfg = _mcrvq_cfg(cfg, dim=corpus.shape[1])
        cbs = quantizer.train_codebooks(corpus, mcfg, _schedule(cfg))
        Path(output).write_bytes(quantizer.save_codebooks(cbs))
        result = quantizer.mcrvq_encode(corpus, cbs, mcfg)
        entropy = quantizer.token_entropy(result.tokens)
        for s, e in enumerate(entropy):
            click.echo(f"stage{s}_usage_entropy_bits={e:.4f}")
        click.echo(f"input_energy={result.stage_residual_energy[0]:.6g}")
        click.echo(f"final_residual_energy={result.stage_residual_energy[-1]:.6g}")
        click.echo(f"wrote {output}")

    _wrap(run)


@main.command()
@click.argument("input_wav", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--weights", type=click.Path(), required=True)
@click.option("--codebooks", type=click.Path(), required=True)
@click.option("-o", "--output", type=click.Path(), required=True)
def encode(input_wav, config_path, weights, codebooks, output):
    """Encode a WAV file into an LCBS token stream."""

    def run():
        cfg = load_run_config(config_path)
        bundle = nets.load_weights(Path(weights).read_bytes())
        cbs = quantizer.load_codebooks(Path(codebooks).read_bytes())
        audio = read_wav(input_wav)
        latents = nets.encoder_forward(
            audio, bundle, nets.EncoderConfig(out_dim=cfg["mcrvq"]["dim"])
        )
        mcfg = _mcrvq_cfg(cfg, dim=latents.shape[1])
        result = quantizer.mcrvq_encode(latents, cbs, mcfg)
        header = bitstream.StreamHeader(
            sample_rate=TARGET_SR,
            hop=cfg["stft"]["hop"],
            n_total=mcfg.n_total,
            n_parallel=mcfg.n_parallel,
            codebook_size=mcfg.codebook_size,
            frame_count=result.tokens.shape[0],
        )
        blob = bitstream.pack(bitstream.TokenStream(header, result.tokens))
        Path(output).write_bytes(blob)
        click.echo(
            f"frames={header.frame_count} "
            f"bandwidth_bps={bitstream.bandwidth_bps(header):.0f}"
        )

    _wrap(run)


@main.command()
@click.argument("input_stream", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--weights", type=click.Path(), required=True)
@click.option("--codebooks", type=click.Path(), required=True)
@click.option("--stages", type=int, default=None,
              help="Decode only the first N stages (defaults to all).")
@click.option("-o", "--output", type=click.Path(), required=True)
def decode(input_stream, config_path, weights, codebooks, stages, output):
    """Decode an LCBS token stream back into a WAV file."""

    def run():
        cfg = load_run_config(config_path)
        ts = bitstream.unpack(Path(input_stream).read_bytes())
        bundle = nets.load_weights(Path(weights).read_bytes())
        cbs = quantizer.load_codebooks(Path(codebooks).read_bytes())
        dim = sum(cbs[i].dim for i in range(ts.header.n_parallel))
        mcfg = quantizer.McrvqConfig(
            n_total=ts.header.n_total,
            n_parallel=ts.header.n_parallel,
            codebook_size=ts.header.codebook_size,
            dim=dim,
        )
        n_stages = ts.header.n_total if stages is None else stages
        latents = quantizer.mcrvq_decode(
            ts.tokens.astype(np.int64), cbs, mcfg, n_stages
        )
        stft_cfg = dsp.StftConfig(n_fft=cfg["stft"]["n_fft"], hop=ts.header.hop)
        audio = nets.decoder_forward(
            latents,
            bundle,
            _decoder_cfg(cfg, dim),
            stft_cfg,
            sample_rate=ts.header.sample_rate,
        )
        write_wav(output, audio)
        click.echo(f"samples={len(audio)} wrote {output}")

    _wrap(run)


def _snr_db(ref: np.ndarray, deg: np.ndarray, cap: float = 99.0) -> float:
    noise = np.sum((ref - deg) ** 2)
    signal = np.sum(ref**2)
    if noise <= 0.0 or signal <= 0.0:
        return cap
    return min(cap, 10.0 * math.log10(signal / noise))


def _spectral_convergence(ref, deg, stft_cfg) -> float:
    a = np.abs(dsp.stft(ref, stft_cfg).coeffs)
    b = np.abs(dsp.stft(deg, stft_cfg).coeffs)
    denom = np.linalg.norm(a)
    return float(np.linalg.norm(a - b) / denom) if denom > 0 else 0.0


@main.command("eval")
@click.argument("ref_wav", type=click.Path())
@click.argument("deg_wav", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--latents", type=click.Path(), default=None,
              help="Latents (.npy) for an additional quantizer-loss metric.")
@click.option("--codebooks", type=click.Path(), default=None)
@click.option("--json", "json_path", type=click.Path(), default=None)
def eval_cmd(ref_wav, deg_wav, config_path, latents, codebooks, json_path):
    """Report mel distance, SNR, and spectral convergence between two WAVs."""

    def run():
        cfg = load_run_config(config_path)
        ref = read_wav(ref_wav)
        deg = read_wav(deg_wav)
        if len(ref) != len(deg):
            raise DataError(
                f"length mismatch: {len(ref)} vs {len(deg)} samples"
            )
        stft_cfg = _stft_cfg(cfg)
        metrics = {
            "mel_loss": losses.mel_loss(ref, deg, stft_cfg, _mel_cfg(cfg)),
            "snr_db": _snr_db(ref.samples, deg.samples),
            "spectral_convergence": _spectral_convergence(ref, deg, stft_cfg),
        }
        if latents and codebooks:
            z = _load_latent_corpus(latents)
            cbs = quantizer.load_codebooks(Path(codebooks).read_bytes())
            mcfg = _mcrvq_cfg(cfg, dim=z.shape[1])
            result = quantizer.mcrvq_encode(z, cbs, mcfg)
            metrics["quantizer_loss"] = quantizer.quantizer_loss(result, z)
        for key, value in metrics.items():
            click.echo(f"{key}={value:.6f}")
        if json_path:
            Path(json_path).write_text(json.dumps(metrics, indent=2))

    _wrap(run)


@main.command("profile-channels")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--latents", type=click.Path(), default=None)
@click.option("--audio-dir", type=click.Path(), default=None)
@click.option("--weights", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
def profile_channels(config_path, latents, audio_dir, weights, seed, csv_path):
    """Compare captured-energy per stage between MCRVQ and plain RVQ."""

    def run():
        cfg = load_run_config(config_path)
        if seed is not None:
            cfg["seed"] = seed
        corpus = _corpus_from_inputs(latents, audio_dir, weights, cfg)
        mcfg = _mcrvq_cfg(cfg, dim=corpus.shape[1])
        schedule = _schedule(cfg)
        mcrvq_cbs = quantizer.train_codebooks(corpus, mcfg, schedule)
        rvq_cbs = quantizer.train_rvq_codebooks(
            corpus, mcfg.n_total, mcfg.codebook_size, schedule
        )
        profile = quantizer.channel_information_profile(
            corpus, mcrvq_cbs, rvq_cbs, mcfg
        )
        rows = profile_rows(profile, mcfg)
        click.echo("pipeline,row_type,stage,captured_fraction,token_entropy_bits,"
                   "zero_energy")
        for row in rows:
            click.echo(",".join(str(v) for v in row))
        if csv_path:
            with open(csv_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow([
                    "pipeline", "row_type", "stage", "captured_fraction",
                    "token_entropy_bits", "zero_energy",
                ])
                writer.writerows(rows)

    _wrap(run)


def profile_rows(profile: quantizer.ChannelProfile, cfg: quantizer.McrvqConfig):
    """Flatten a ChannelProfile into CSV rows: per pipeline, one row per
    parallel stage plus one row per decodable prefix (m = n_parallel..N)."""
    rows = []
    for pipeline, stage_cap, prefix_cap, entropy in (
        ("mcrvq", profile.mcrvq_stage_captured, profile.mcrvq_prefix_captured,
         profile.mcrvq_entropy),
        ("rvq", profile.rvq_stage_captured,
         profile.rvq_prefix_captured[cfg.n_parallel - 1 :], profile.rvq_entropy),
    ):
        for i in range(cfg.n_parallel):
            rows.append(
                (pipeline, "stage", i + 1, f"{stage_cap[i]:.6f}",
                 f"{entropy[i]:.4f}", int(profile.zero_energy))
            )
        for j, m in enumerate(range(cfg.n_parallel, cfg.n_total + 1)):
            rows.append(
                (pipeline, "prefix", m, f"{prefix_cap[j]:.6f}",
                 f"{entropy[m - 1]:.4f}", int(profile.zero_energy))
            )
    return rows


if __name__ == "__main__":
    main()
