from .analysis import (
    OperatingPoint,
    RateReport,
    avg_transmissions,
    ce_rate,
    cs_objective_mc,
    cs_rayleigh,
    exp_integral_e1,
    key_rate,
    optimize_rate,
    p_out,
    rate_report,
    tradeoff_sweep,
)
from .coset import KeyParts, distill, eve_key_parts, posterior_counts, posterior_is_uniform
from .errors import (
    ArqKeyError,
    ConfigError,
    DomainError,
    EnumerationBoundError,
    IncompleteExchangeError,
    TraceFormatError,
)
from .fading import BlockGains, ChannelSpec, bob_decodes, eve_erased, mutual_info, sample_block
from .fec import ConvCodeSpec, PacketSpec, conv_encode, fig4_experiment, simulate_link, viterbi_decode
from .protocol import (
    ExchangeTrace,
    ProtocolParams,
    estimate_key_throughput,
    estimate_outage,
    run_exchange,
)
from .traces import load_trace, load_trace_frame, write_trace
