"""Intrinsic zero-dynamics attack on an LQR-controlled cart-pole."""

import numpy as np

from zdaguard.sim import run_cartpole_demo

nominal = run_cartpole_demo(attack=False)
attacked = run_cartpole_demo(attack=True)
info = attacked.info
print(f"unstable invariant zero {info['zero_real']:.3f}{info['zero_imag']:+.3f}j")
print(f"output deviation {info['max_output_deviation']:.1e}, first alarm {attacked.first_alarm}")
for k in range(0, attacked.K + 1, 5):
    print(f"t={attacked.time[k]:5.2f}  |x| {np.linalg.norm(attacked.state[k]):10.3f}"
          f"  |x_hat| {np.linalg.norm(attacked.estimate[k]):7.3f}"
          f"  nominal |x_hat| {np.linalg.norm(nominal.estimate[k]):7.3f}")
