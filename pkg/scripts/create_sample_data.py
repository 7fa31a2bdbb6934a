"""
Create a sample synthetic transaction corpus for trying the pipeline.
"""

from pathlib import Path

from config.settings import load_settings
from engine.synth import generate_synthetic, write_synthetic


def create_sample_corpus(out_dir: Path = Path("data"), n_users: int = 200) -> tuple[Path, Path]:
    """Write a small synthetic corpus (transactions.csv, truth.csv) into `out_dir`."""
    settings = load_settings(overrides={"synth.n_users": n_users})
    corpus = generate_synthetic(settings.synth, settings.seed)
    return write_synthetic(corpus, out_dir)


if __name__ == "__main__":
    transactions, truth = create_sample_corpus()
    print(f"✅ Sample corpus created: {transactions}")
    print(f"📊 Ground truth: {truth}")
    print("\nNext: bia ingest && bia split && bia featurize && bia train && bia evaluate")
