"""Lyrics-to-audio alignment and transcription from raw waveforms."""

from .alphabet import (BLANK, DEFAULT_ALPHABET, NUM_CLASSES, Alphabet,
                       TimeGrid, frame_to_time, normalize_lyrics,
                       normalize_text)
from .align import (AlignConfig, AlignedSequence, WordTiming, WordTimings,
                    align_song, force_align, inject_noise, timings_from_path,
                    write_timing_file)
from .ctc import (brute_force_likelihood, collapse, ctc_grad,
                  ctc_log_likelihood)
from .decode import (BeamConfig, NgramLm, beam_search, greedy_decode,
                     grid_search_lm_weights, lm_beam_search, train_lm)
from .metrics import (EvalResult, alignment_error, cer,
                      load_reference_timings, perc_correct, wer)
from .net import (NetConfig, TrainConfig, compute_geometry, init_params,
                  load_checkpoint, save_checkpoint, train)

__version__ = "0.1.0"
