"""
zakdd domain modules: delay-Doppler grids, transforms, waveforms, channels,
receivers, signaling schemes and radar.
"""

__version__ = "1.0.0"
