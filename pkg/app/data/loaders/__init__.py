from .case_loader import CaseLoader, load_case

__all__ = ["CaseLoader", "load_case"]
