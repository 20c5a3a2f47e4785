from . import protocol
from .offline import run_offline
from .server import SessionServer, Transport
