"""Photon emission, transport and Compton deposition in the depletion layer."""
from .attenuation import AttenuationTable, load_attenuation_table, parse_attenuation_table
from .generator import (DEFAULT_STOPPING_POWER, InteractionEvent, Interactions, Scene,
                        expected_interaction_count, generate_interactions)
from .kinematics import (compton_edge, compton_electron_energy, deposit_in_depletion,
                         interaction_probability, klein_nishina_unnormalized, sample_compton,
                         theta_pdf)
from .sources import (EmissionLine, Isotope, PointSource, activity_at, expected_decays,
                      load_isotope, sample_decay_times)
from .transport import (Photon, PixelHit, chip_cone, chip_solid_angle, intersect_chip,
                        rectangle_solid_angle, transport_to_pixel)

__all__ = [
    "AttenuationTable", "load_attenuation_table", "parse_attenuation_table",
    "DEFAULT_STOPPING_POWER", "InteractionEvent", "Interactions", "Scene",
    "expected_interaction_count", "generate_interactions",
    "compton_edge", "compton_electron_energy", "deposit_in_depletion", "interaction_probability",
    "klein_nishina_unnormalized", "sample_compton", "theta_pdf",
    "EmissionLine", "Isotope", "PointSource", "activity_at", "expected_decays", "load_isotope",
    "sample_decay_times",
    "Photon", "PixelHit", "chip_cone", "chip_solid_angle", "intersect_chip",
    "rectangle_solid_angle", "transport_to_pixel",
]
