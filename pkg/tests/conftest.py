"""Shared fixtures.

desk_run is the expensive session fixture behind the end-to-end checks: it
generates the 64-volume corpus, trains the autoencoder for the full
iteration budget on the 48 training volumes, and refines 16 corrupted
held-out volumes.  Everything is seeded, so the numbers it produces are
reproducible bit for bit on one machine.
"""

import time
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

import shaperefine as sr

# corruption used both for training triplets and for held-out evaluation;
# chosen so corrupted masks land well below clean (mean DICE ~0.76)
DESK_NOISE = sr.NoiseParams(fp_blobs=(2, 5), fn_blobs=(2, 5), blob_radius=(3.0, 7.0))
HELD_OUT_SEED = 7777
TRAIN_COUNT = 48


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    corpus_dir = root / "corpus"
    t0 = time.monotonic()

    params = sr.SynthParams(count=64, seed=0)
    paths = sr.synth_corpus(params, corpus_dir)
    vols = [sr.read_volume(p) for p in paths]
    train_paths, train_vols = paths[:TRAIN_COUNT], vols[:TRAIN_COUNT]
    held_vols = vols[TRAIN_COUNT:]

    dictionary = sr.build_dictionary(train_paths, axis="z", resample_m=128)
    sr.save_dictionary(dictionary, root / "dict.json")

    model = sr.init_model(sr.SAEConfig.desk_default(), seed=0)
    train_cfg = sr.TrainConfig()
    train_result = sr.train_sae(
        model, train_vols, train_cfg,
        transform=sr.TransformParams(), noise=DESK_NOISE,
        trace_path=root / "trace.csv", log_every=200,
    )
    sr.save_model(model, root / "model.sae")

    cfg = sr.PipelineConfig()
    rows = []
    for i, clean in enumerate(held_vols):
        corrupted = sr.apply_noise(clean, replace(DESK_NOISE, seed=(HELD_OUT_SEED, i)))
        res = sr.refine(corrupted, dictionary, model, cfg, label_root=corpus_dir)
        rows.append(SimpleNamespace(
            clean=clean,
            corrupted=corrupted,
            refined=res.refined,
            retrieved_id=res.retrieved_id,
            dice_corrupted=sr.dice(corrupted, clean),
            dice_refined=sr.dice(res.refined, clean),
            asd_corrupted=sr.asd(corrupted, clean),
            asd_refined=sr.asd(res.refined, clean),
        ))

    member = train_vols[0]
    fx = sr.refine(member, dictionary, model, cfg, label_root=corpus_dir)

    return SimpleNamespace(
        root=root,
        corpus_dir=corpus_dir,
        params=params,
        paths=paths,
        vols=vols,
        train_paths=train_paths,
        train_vols=train_vols,
        held_vols=held_vols,
        dictionary=dictionary,
        model=model,
        train_cfg=train_cfg,
        train_result=train_result,
        pipeline_cfg=cfg,
        rows=rows,
        fixed_point_dice=sr.dice(fx.refined, member),
        fixed_point_id=fx.retrieved_id,
        elapsed_s=time.monotonic() - t0,
    )


TINY_SYNTH = sr.SynthParams(
    count=6, dims=(16, 16, 4), families=("round",), seed=3,
    radius=(3.0, 4.0), center_jitter=1.0,
)


@pytest.fixture(scope="session")
def tiny_corpus():
    """Six small round volumes sized for the tiny network geometry."""
    return [v for v, _ in sr.synth_volumes(TINY_SYNTH)]


@pytest.fixture()
def announce(capsys):
    def _announce(line: str) -> None:
        with capsys.disabled():
            print(line, flush=True)
    return _announce
