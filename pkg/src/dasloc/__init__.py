"""Desk-scale antenna-subset selection and uplink fingerprint localization.

Modules:

- ``channels``: scatterer channel model, scenario and dataset generation
- ``nn``: dense-network engine (forward, backprop, Adam, losses, scalers)
- ``selection``: relaxed one-hot selection layer and the non-learned baselines
- ``training``: the two training stages and prediction with uncertainty
- ``evaluation``: metrics, method comparison, map/report generation
- ``io``: binary dataset/model formats and the small text formats
- ``config``: flat key=value experiment configs
- ``cli``: the ``dasloc`` command
"""

__version__ = "0.1.0"
