from .ensemble import DIHEDRAL, dihedral, inverse_dihedral, self_ensemble
from .flops import FlopsReport, empirical_mac_count, flops_global_msa, flops_vewin, vewin_attention_macs
from .metrics import QualityScore, psnr, rgb_to_y, score_y, ssim

__all__ = [
    "DIHEDRAL", "FlopsReport", "QualityScore", "dihedral", "empirical_mac_count", "flops_global_msa",
    "flops_vewin", "inverse_dihedral", "psnr", "rgb_to_y", "score_y", "self_ensemble", "ssim",
    "vewin_attention_macs",
]
