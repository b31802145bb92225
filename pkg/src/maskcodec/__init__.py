"""maskcodec: a neural audio codec engine built around masked-channel
residual vector quantization, with an STFT-domain spectral decoder head,
bit-exact token streams, and rate-distortion evaluation tools."""

from .dsp import (
    AudioBuffer,
    ComplexSpectrogram,
    MelConfig,
    StftConfig,
    head_to_spectrum,
    istft,
    mel_spectrogram,
    stft,
)
from .quantizer import (
    ChannelProfile,
    Codebook,
    CodebookSet,
    McrvqConfig,
    QuantizationResult,
    TrainSchedule,
    channel_information_profile,
    mcrvq_decode,
    mcrvq_encode,
    quantizer_loss,
    rvq_decode,
    rvq_encode,
    train_codebooks,
    train_rvq_codebooks,
    vq_nearest,
)
from .estimators import MaskedChannelRVQ, ResidualVQ
from .bitstream import StreamHeader, TokenStream, bandwidth_bps, pack, unpack
from .losses import (
    LossWeights,
    adv_hinge_loss,
    disc_hinge_loss,
    feature_matching_loss,
    generator_total_loss,
    mel_loss,
)
from .nets import (
    DecoderConfig,
    EncoderConfig,
    WeightsBundle,
    decoder_forward,
    encoder_forward,
    init_random_weights,
    load_weights,
    save_weights,
    weight_manifest,
)

__version__ = "0.1.0"
