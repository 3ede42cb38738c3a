"""Closed-loop mindfulness neurofeedback engine and offline analysis toolkit."""

__version__ = "0.1.0"

from .dsp import (BandPowers, FilterBank, band_power, compute_band_powers,
                  design_bandpass, hilbert_envelope, reject_artifacts,
                  split_epochs, welch_psd, zscore_matrix)
from .feedback import (LikertResponse, MiscResponse, SceneState, SessionMode,
                       build_schedule, map_score_to_scene, validate_likert,
                       validate_misc)
from .ingest import (SampleRecord, StreamConfig, SynthControl, WindowBuffer,
                     iter_windows, open_source, synth_generate)
from .model import (FeatureMatrix, MindfulnessScore, ModelWeights,
                    extract_features, forward, init_random_weights,
                    load_weights, save_weights, score_stream)
from .session import SessionDescriptor, SessionRunner, load_session
from .stats import (bh_fdr, cluster_permutation, paired_t, pearson_r,
                    relative_misc, rm_anova, welch_t)

__all__ = [name for name in dir() if not name.startswith("_")]
