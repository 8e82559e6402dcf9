from observe.fourier        import FourierObserver
from observe.volume_average import VolumeAverageObserver

# Copy observe/fourier.py as a starting point for a new operator, then list
# it here so the registry in common/observer_backend.py can see it.
