"""Random walks on two networks glued by a uniform matching: cutoff, quasi-trees and concentration on the symmetric group."""

__version__ = "0.1.0"
