"""Floquet influence-functional simulator for driven, strongly damped spin-boson models.

Typical use::

    from floquet_if import *
    bath = ohmic_bath(0.1, 2.5)
    fit = fit_exponentials(bath, 4)
    model = single_spin(1.0, "transversal", eps=1.0, omega_d=5.0)
    grid = TrotterGrid.for_model(model, 0.05)
    gen = build_environment_generator(fit, PseudomodeSpec.uniform(4, 6, 3), model.S, 2)
    fp = assemble_step_propagators(build_semigroup_if(gen, grid.dt), model, grid)
    ss = steady_state(fp)
"""

import types as _types

from ._version import __version__
from .bath import (BathSpec, ExponentialBathFit, SpectralDensityOhmic, TabulatedSpectralDensity,
                   bath_correlation, bose_occupation, evaluate_spectral_density,
                   fit_exponentials, matrix_pencil, ohmic_bath, ohmic_correlation_t0)
from .benchmark import (EffectiveModel, compare_trajectories, expectations, kick_operator,
                        magnus_effective_model, redfield_propagate)
from .core import ComplexTensor, EigenDecomposition, contract, eig_general, matrix_exponential, svd
from .embedding import (IFCache, PseudomodeSpec, SemiGroupIF, build_environment_generator,
                        build_semigroup_if, cache_key, cutoff_convergence, identity_if,
                        if_diagnostics)
from .engine import (DriveTerm, FloquetPropagator, SystemModel, TrotterGrid,
                     assemble_floquet_propagator, assemble_step_propagators, floquet_spectrum,
                     multitime_correlation, propagate_periods, propagate_quench, steady_state)
from .errors import *  # noqa: F401,F403
from .models import SX, SY, SZ, ket_density, single_spin, singlet, two_spin
from .observables import (concurrence, concurrence_map, heat_current_density,
                          period_averaged_concurrence, spectral_analysis,
                          steady_two_time_correlation, total_heat_current,
                          transient_heat_current)

__all__ = [name for name, obj in dict(globals()).items()
           if not name.startswith("_") and not isinstance(obj, _types.ModuleType)]
__all__.append("__version__")
