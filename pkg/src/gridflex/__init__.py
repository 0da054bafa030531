"""Combined MV+LV optimal operation and P-Q flexibility envelope estimation.

The package models a distribution grid as a fully modeled radial MV network
coupled to model-less LV grids represented by voltage/current sensitivity
coefficients. It computes multi-period optimal operating setpoints under a
second-order-cone relaxation of the DistFlow equations, and estimates
aggregated fast and slow P-Q flexibility envelopes at the primary substation
under full MV+LV security constraints.
"""

__version__ = "0.1.0"
