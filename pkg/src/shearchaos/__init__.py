"""Numerical studies of shear-induced chaos in kicked and noise-driven oscillators."""

from .models import (CylinderState, NoiseConfig, OscParams, PoissonKickLaw, ShearParams,
                     TorusState, kick_map_sine, kicked_time_T_map, osc_kick_map, osc_vector_field,
                     sample_kick_schedule, sde_fields, shear_flow_jacobian, shear_flow_map)
from .lyapunov import (LyapEstimate, ProtocolResult, lyap_max, protocol_kicked,
                       protocol_osc_kicked, protocol_osc_sde, protocol_poisson, protocol_sde)

__version__ = "0.1.0"
