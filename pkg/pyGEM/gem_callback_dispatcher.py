#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
from typing import Callable, Generic, List, TypeVar


T = TypeVar("T", bound=Callable[..., None])


class GEMCallbackDispatcher(Generic[T]):
    """
    Calls a list of callbacks in the order they were registered.
    """
    _callbacks: List[T]

    def __init__(self):
        self._callbacks = []

    def __call__(self, *args, **kwargs):
        for callback in list(self._callbacks):
            callback(*args, **kwargs)

    def __len__(self) -> int:
        return len(self._callbacks)

    def register_callback(self, callback: T, remove: bool = False):
        """
        Registers/unregisters a callback. Registering the same callback twice has no effect.

        :param callback: the callback to add/remove.
        :param remove: whether the callback should be removed.
        """
        if remove:
            if callback in self._callbacks:
                self._callbacks.remove(callback)
        elif callback not in self._callbacks:
            self._callbacks.append(callback)
