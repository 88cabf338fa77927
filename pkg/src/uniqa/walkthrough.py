"""Scripted end-to-end run of the pipeline on the synthetic corpus.

Stages follow the four steps of the method:

1. captioning      gen-data, caption (mock MLLM with MOS guidance)
2. purification    pretrain-aes, purify
3. pre-training    pretrain
4. adaptation      finetune, eval (zero-shot, then fine-tuned)

Run with ``python -m uniqa.walkthrough --out-dir DIR``.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from .cli import run_cli

ARTIFACTS = (
    ("corpus", "corpus.jsonl"),
    ("captions", "captions.jsonl"),
    ("clip_aes", "clip_aes.ckpt"),
    ("purified", "purified.jsonl"),
    ("uniqa", "uniqa.ckpt"),
    ("adapter", "adapter.ckpt"),
    ("report_zero_shot", "report_zero_shot.json"),
    ("report_finetuned", "report_finetuned.json"),
)


class StageFailed(RuntimeError):
    def __init__(self, stage: str, code: int):
        self.stage = stage
        self.code = code
        super().__init__(f"walkthrough stage {stage!r} failed with exit code {code}")


@dataclass(frozen=True)
class WalkthroughScript:
    out_dir: Path
    n_images: int = 400
    seed: int = 7
    epochs: int = 5
    repeats: int = 10

    def paths(self) -> dict[str, Path]:
        return {key: self.out_dir / name for key, name in ARTIFACTS}

    def commands(self) -> list[tuple[str, list[str]]]:
        p = {k: str(v) for k, v in self.paths().items()}
        seed = str(self.seed)
        train = ["--epochs", str(self.epochs), "--seed", seed]
        return [
            ("gen-data", ["gen-data", "--n", str(self.n_images), "--seed", seed, "--out", p["corpus"]]),
            ("caption", ["caption", "--corpus", p["corpus"], "--task", "both", "--url", f"mock://{seed}",
                         "--out", p["captions"]]),
            ("pretrain-aes", ["pretrain-aes", "--corpus", p["captions"], "--out", p["clip_aes"], *train]),
            ("purify", ["purify", "--corpus", p["captions"], "--encoder", p["clip_aes"], "--out", p["purified"]]),
            ("pretrain", ["pretrain", "--corpus", p["purified"], "--out", p["uniqa"], *train]),
            ("finetune", ["finetune", "--checkpoint", p["uniqa"], "--corpus", p["purified"], "--seed", seed,
                          "--out", p["adapter"]]),
            ("eval-zero-shot", ["eval", "--checkpoint", p["uniqa"], "--corpus", p["purified"], "--mode",
                                "zero_shot", "--repeats", str(self.repeats), "--seed", seed,
                                "--out", p["report_zero_shot"]]),
            ("eval-finetuned", ["eval", "--checkpoint", p["uniqa"], "--corpus", p["purified"], "--mode", "full",
                                "--repeats", str(self.repeats), "--seed", seed, "--out", p["report_finetuned"]]),
        ]


def run_walkthrough(out_dir, n_images: int = 400, seed: int = 7, epochs: int = 5, repeats: int = 10,
                    env_url: bool = False) -> list[tuple[str, Path]]:
    """Run every stage in order; return the (artifact, path) inventory.

    ``UNIQA_CAPTIONER_URL`` is ignored unless ``env_url`` so the run stays
    offline by default.
    """
    import os

    script = WalkthroughScript(Path(out_dir), n_images, seed, epochs, repeats)
    script.out_dir.mkdir(parents=True, exist_ok=True)
    saved = os.environ.pop("UNIQA_CAPTIONER_URL", None) if not env_url else None
    try:
        for stage, argv in script.commands():
            code = run_cli(argv)
            if code != 0:
                raise StageFailed(stage, code)
    finally:
        if saved is not None:
            os.environ["UNIQA_CAPTIONER_URL"] = saved
    return list(script.paths().items())


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m uniqa.walkthrough")
    ap.add_argument("--out-dir", required=True)
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--repeats", type=int, default=10)
    args = ap.parse_args(argv)
    start = time.perf_counter()
    try:
        inventory = run_walkthrough(args.out_dir, args.n, args.seed, args.epochs, args.repeats)
    except StageFailed as exc:
        print(exc, file=sys.stderr)
        return 1
    for key, path in inventory:
        print(f"{key:18s} {path}")
    print(f"done in {time.perf_counter() - start:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
