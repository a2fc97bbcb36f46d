"""scikit-learn style front end: ``fit`` on motion sequences, ``predict`` by streaming."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import ControlSignal
from .denoiser import NetworkDenoiser, load_checkpoint, save_checkpoint
from .online import EngineConfig, offline_reconstruct, run_stream
from .synthgen import MotionSequence, SynthConfig
from .training import NoiseRobustConfig, TrainConfig, train
from .validation import check_observations, check_sequences


class StreamingMotionDiffuser(BaseEstimator):
    """Causal full-body reconstruction from head and wrist observations.

    ``fit`` trains the frame-wise-noise denoiser on world-frame motion
    sequences; ``predict`` streams observations through the rolling-window
    engine and returns one world-frame pose per observation.

    Parameters mirror the training and engine configuration. ``synth`` is
    only consulted for the field-of-view and dropout model that resamples
    wrist visibility during training.
    """

    def __init__(
        self,
        h=5,
        f=19,
        K=100,
        schedule="cosine",
        width=128,
        n_blocks=4,
        heads=4,
        steps=5000,
        batch_size=64,
        lr=1e-3,
        noise_robust=False,
        noise_level=2.0,
        k_star=3,
        history_corrupt_n=0,
        mask_mode="causal",
        stab_n=2,
        refine_passes=1,
        synth=None,
        random_state=0,
    ):
        self.h = h
        self.f = f
        self.K = K
        self.schedule = schedule
        self.width = width
        self.n_blocks = n_blocks
        self.heads = heads
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.noise_robust = noise_robust
        self.noise_level = noise_level
        self.k_star = k_star
        self.history_corrupt_n = history_corrupt_n
        self.mask_mode = mask_mode
        self.stab_n = stab_n
        self.refine_passes = refine_passes
        self.synth = synth
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            K=self.K, h=self.h, f=self.f, batch_size=self.batch_size, steps=self.steps, lr=self.lr,
            seed=self.random_state, schedule=self.schedule,
            noise_robust=NoiseRobustConfig(self.noise_robust, self.noise_level, self.k_star),
            history_corrupt_n=self.history_corrupt_n, mask_mode=self.mask_mode,
            width=self.width, n_blocks=self.n_blocks, heads=self.heads,
        )

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            h=self.h, f=self.f, K=self.K, stab_n=self.stab_n, refine_passes=self.refine_passes,
            noise_robust=self.noise_robust, k_star=self.k_star,
        )

    def fit(self, X, y=None):
        sequences = check_sequences(X, min_length=self.h + 1 + self.f)
        self.engine_config()  # validates the divisibility constraint before any training
        synth = self.synth if self.synth is not None else SynthConfig()
        result = train(sequences, synth, self._train_config())
        self.model_ = result.model
        self.schedule_ = result.schedule
        self.losses_ = result.losses
        self.n_features_in_ = result.model.config.dim
        return self

    def _denoiser(self):
        check_is_fitted(self, "model_")
        return NetworkDenoiser(self.model_)

    def predict(self, X):
        """Reconstruct world-frame poses for one observation sequence or a list of them.

        ``X`` is a :class:`MotionSequence` carrying observations, a list of
        :class:`ControlSignal`, or a list of either.
        """
        single = isinstance(X, MotionSequence) or (
            isinstance(X, (list, tuple)) and X and isinstance(X[0], ControlSignal)
        )
        batches = [X] if single else list(X)
        outputs = []
        for i, item in enumerate(batches):
            obs = check_observations(item)
            with torch.no_grad():
                if self.mask_mode == "offline":
                    res = offline_reconstruct(self._denoiser(), self.schedule_, self.engine_config(), obs,
                                              seed=self.random_state + i, dim=self.n_features_in_)
                else:
                    res = run_stream(self._denoiser(), self.schedule_, self.engine_config(), obs,
                                     seed=self.random_state + i, dim=self.n_features_in_)
            outputs.append(res.poses)
        return outputs[0] if single else outputs

    def score(self, X, y=None):
        """Negative MPJPE (meters) over frames after the history warm-up."""
        from .metrics import mpjpe

        sequences = check_sequences(X, min_length=1)
        preds = self.predict(sequences)
        errs = [mpjpe(p, s.poses_world, "all", skip=min(self.h, len(s) - 1)) for p, s in zip(preds, sequences)]
        return -float(np.mean(errs))

    def save(self, path):
        check_is_fitted(self, "model_")
        save_checkpoint(self.model_, self.schedule_, path, self._train_config().to_dict())
        return path

    @classmethod
    def load(cls, path, **params):
        model, sched = load_checkpoint(path)
        c = model.config
        est = cls(h=c.h, f=c.f, K=sched.K, schedule=sched.kind, width=c.width, n_blocks=c.n_blocks,
                  heads=c.heads, **params)
        est.model_, est.schedule_, est.n_features_in_ = model, sched, c.dim
        return est
