"""Neural normalized min-sum decoding of LDPC codes.

Modules: ``tanner`` (parity-check matrices and Tanner graphs), ``codes``
(constructions and bundled codes), ``channel`` (BPSK/AWGN LLRs),
``traindata`` (SNR-blended training data), ``decode`` (BP and the min-sum
family), ``learn`` (unrolled training) and ``bench`` (Monte-Carlo curves and
operation counts).
"""

__version__ = "0.1.0"
