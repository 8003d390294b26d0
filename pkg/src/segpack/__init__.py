"""Boundary-aware recurrent encoders for speech-image retrieval.

Recurrent "packager" layers reset their hidden state at segment boundaries
(phones, syllables, or words) and can subsample the sequence to one vector
per segment.  The package bundles everything needed to study that idea at
desk scale: a small autodiff core, boundary-tier tooling with a
syllabifier, the paired encoders and contrastive training loop, retrieval
evaluation with significance tests, a synthetic corpus generator, and an
experiment-grid CLI.
"""

from .encoder import (AttentionParams, ConvParams, ConvSpec, EncoderConfig, EncoderParams,
                      GruParams, ImageParams, LayerSpec, SequenceBatch, attention_pool,
                      conv1d, encode_image, encode_utterance, gru_step, init_params,
                      packager_forward, validate_config, vanilla_forward)
from .evaluation import (RetrievalReport, ZTestResult, evaluate_retrieval,
                         export_embeddings, load_embeddings, rank_images, recall_at_k,
                         z_test)
from .inventory import Inventory
from .kernels import BACKEND
from .optim import AdamState, adam_init, adam_update
from .segmentation import (AlignedToken, BoundaryVector, PhonemeString, Utterance,
                           boundaries_to_frames, compression_rate, parse_alignment,
                           project_boundaries, shuffle_boundaries, syllabify,
                           validate_utterance)
from .synthcorpus import SynthSpec, VocabWord, default_vocab, generate, load_corpus, write_corpus
from .tensor import (NonFiniteError, ShapeError, Tensor, grad_check, l2_normalize,
                     masked_softmax, matmul, pointwise, zero_grads)
from .training import (PairedDataset, TrainConfig, TrainResult, attach_random_tiers,
                       contrastive_loss, make_batches, train)

__version__ = "0.1.0"
