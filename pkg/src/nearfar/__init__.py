"""Near-far field channel toolkit for large uniform planar arrays.

Synthesis of channels with mixed near/far scatter paths, EM-based parameter
estimation treating each path's field regime as a hidden label, closed-form
and Monte Carlo outage probability, and greedy grid-dictionary baselines.
"""

from .steering import (ArrayGeometry, FAR, NEAR, element_distance,
                       far_field_steering, near_field_steering,
                       rayleigh_distance, steering, steering_gradients)
from .channel import (ChannelModelParams, ChannelSampleSet, FieldHypothesis,
                      PathParams, ScenarioConfig, draw_scenario, mean_channel,
                      sample_channels, sigma2_for_K)
from .em import (EMConfig, EMResult, PosteriorZ, QGradient, em_fit,
                 log_likelihood_given_z, m_step, observed_log_likelihood,
                 posterior_z, q_function, q_gradient)
from .outage import (OPQuery, dbm_to_watts, lower_incomplete_gamma,
                     mc_outage_curve, noncentral_chi2_cdf,
                     outage_probability_analytic, outage_probability_mc,
                     regularized_lower_gamma)
from .baselines import (Dictionary, SompResult, build_far_dictionary,
                        build_polar_dictionary, somp_fit)

__version__ = "0.1.0"
