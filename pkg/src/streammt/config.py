"""Plain-text run configuration.

Format: one "section.key = value" per line, '#' comments, blank lines
ignored.  No nesting, no quoting; any language can parse it with a
30-line reader.  Unknown keys are rejected.  CLI flags override file
values, and the fully resolved configuration is echoed into the run
directory so a run can be reproduced from its artifacts alone.

All randomness flows from run.seed: each stage derives its own seed as
splitmix64_mix(run.seed XOR fnv1a64(stage_name)) (see rng module), so any
stage can be re-run in isolation without disturbing the others.
"""

from __future__ import annotations

from .errors import ConfigurationError
from .rng import derive_seed


def _floats(text):
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default)
SCHEMA = {
    "run.seed": (int, 7),
    "corpus.size": (int, 6250),
    "corpus.vocab_size": (int, 24),
    "corpus.fertility_rate": (float, 0.2),
    "corpus.merge_rate": (float, 0.1),
    "corpus.swap_probability": (float, 0.3),
    "corpus.len_min": (int, 4),
    "corpus.len_max": (int, 12),
    "split.train": (float, 0.8),
    "split.dev": (float, 0.1),
    "split.test": (float, 0.1),
    "model.d_model": (int, 64),
    "model.enc_layers": (int, 2),
    "model.dec_layers": (int, 2),
    "model.max_len": (int, 64),
    "train_base.encoder_mode": (str, "causal"),
    "train_base.lr": (float, 3e-3),
    "train_base.warmup": (int, 200),
    "train_base.epochs": (int, 30),
    "train_base.batch_tokens": (int, 2000),
    "train_base.beta1": (float, 0.9),
    "train_base.beta2": (float, 0.999),
    "labels.gamma": (float, 0.5),
    "policy.d_p": (int, 16),
    "policy.lr": (float, 1e-2),
    "policy.epochs": (int, 30),
    "policy.batch_size": (int, 256),
    "decode.delta": (float, 0.5),
    "decode.beam_size": (int, 1),
    "decode.max_len_factor": (float, 2.0),
    "eval.min_source_len": (int, 8),
    "eval.threads": (int, 1),
    "sweep.deltas": (_floats, (0.5, 0.8, 0.9)),
    "sweep.beam_size": (int, 1),
}


class RunConfig:
    """Resolved configuration: schema defaults, then file, then overrides."""

    def __init__(self):
        self._values = {k: default for k, (_, default) in SCHEMA.items()}

    def __getitem__(self, key):
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown config key {key!r}")
        return self._values[key]

    def set(self, key: str, raw):
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            self._values[key] = parser(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad value for {key}: {raw!r} ({exc})") from exc

    def load_file(self, path):
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigurationError(
                        f"{path}: line {lineno}: expected 'key = value'")
                key, value = (part.strip() for part in stripped.split("=", 1))
                try:
                    self.set(key, value)
                except ConfigurationError as exc:
                    raise ConfigurationError(f"{path}: line {lineno}: {exc}") from exc
        return self

    def apply_overrides(self, pairs):
        """pairs: iterable of "key=value" strings from the command line."""
        for item in pairs or ():
            if "=" not in item:
                raise ConfigurationError(f"--set expects key=value, got {item!r}")
            key, value = (part.strip() for part in item.split("=", 1))
            self.set(key, value)
        return self

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self["run.seed"], stage)

    def dump(self) -> str:
        lines = []
        for key in sorted(self._values):
            v = self._values[key]
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    def echo(self, run_dir):
        import os

        os.makedirs(run_dir, exist_ok=True)
        path = os.path.join(run_dir, "config.resolved.cfg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dump())
        return path
