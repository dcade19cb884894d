"""Mix synthetic speech with white noise at chosen SNRs and estimate them back blind.

Run: python3 demos/snr_mixing.py
"""

import numpy as np

from clinasr.audio import DEFAULT_SCHEDULE, NoiseClip, Waveform, mix_at_snr, sample_target_snr, signal_power_db
from clinasr.snr import estimate_snr_wada, gamma_speech

rate = 16000
speech = Waveform(gamma_speech(3 * rate, seed=1), rate)
noise = NoiseClip(Waveform(np.random.default_rng(2).standard_normal(rate).astype(np.float32) * 0.1, rate), "white")
print(f"clean speech power {signal_power_db(speech):.2f} dB")

print("\ntarget  gain     estimated")
for target in (0, 10, 20, 24, 30):
    mix = mix_at_snr(speech, noise, target)
    est = estimate_snr_wada(mix.waveform)
    print(f"{target:6.1f}  {mix.gain:.4f}  {est.snr_db:9.2f}")

draws = np.array([sample_target_snr(DEFAULT_SCHEDULE, s) for s in range(10000)])
print(f"\nschedule draws: mean {draws.mean():.2f} dB, sd {draws.std():.2f} dB, range [{draws.min():.2f}, {draws.max():.2f}]")
