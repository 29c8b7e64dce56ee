"""
Model components: patch grid, SURM, CDM, GMA, decoder and the assembled network
"""
from .patch_grid import Modality, PatchGrid, PatchSequence
from .network import NetOutput, TreeCoverNet

__all__ = ['Modality', 'PatchGrid', 'PatchSequence', 'NetOutput', 'TreeCoverNet']
