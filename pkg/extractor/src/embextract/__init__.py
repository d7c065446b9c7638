"""embextract: offline adapter that turns (prompt, image) manifests into the
embedding and keypoint stores the bodymetric scoring toolkit reads."""

__version__ = "0.1.0"

from . import backends, blur, cli, emb1, manifest, pipeline  # noqa: F401
