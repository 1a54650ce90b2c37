"""Mutable kernel state records.

Kernel state is a bundle of numpy arrays and scalar parameters.  Bundling it
in a plain tuple makes every pass to a jitted function copy the bundle and
bump the reference count of each member array, which dominates run time.
A structref holds the members behind a single reference instead.  The Python
proxy keeps the original arrays, so Python code reads the same buffers the
kernels write.
"""
from numba import types
from numba.experimental import structref


class StateProxy(structref.StructRefProxy):
    _fields: tuple = ()

    def __new__(cls, **kw):
        missing = [f for f in cls._fields if f not in kw]
        if missing or len(kw) != len(cls._fields):
            raise TypeError(f"{cls.__name__} needs exactly the fields {cls._fields}")
        vals = [kw[f] for f in cls._fields]
        ctor = cls.__dict__.get("_ctor")
        if ctor is not None:
            self = ctor(*vals)
        else:
            self = structref.StructRefProxy.__new__(cls, *vals)
        self._py = dict(zip(cls._fields, vals))
        return self

    def __getattr__(self, name):
        try:
            return self.__dict__["_py"][name]
        except KeyError:
            raise AttributeError(name) from None

    def __repr__(self):
        return f"{type(self).__name__}({', '.join(self._fields)})"


def _unliteral_fields(self, fields):
    return tuple((name, types.unliteral(typ)) for name, typ in fields)


def define_state(name, fields, module):
    """Create ``(proxy class, numba type class)`` for a state record.

    Assign the results to module globals named `name` and ``name + "Type"``
    so that numba's on-disk cache can pickle the type by reference.  The
    default constructor is compiled afresh in every process; a module can
    attach a cached one as ``proxy._ctor``.
    """
    fields = tuple(fields.split())
    typ = type(name + "Type", (types.StructRef,), {
        "preprocess_fields": _unliteral_fields, "__module__": module,
    })
    structref.register(typ)
    proxy = type(name, (StateProxy,), {"_fields": fields, "__module__": module})
    structref.define_proxy(proxy, typ, list(fields))
    return proxy, typ
