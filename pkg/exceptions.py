"""Иерархия исключений flexhawkes"""

from typing import Optional

import numpy as np


class FlexHawkesError(Exception):
    """Базовое исключение библиотеки"""


class InvalidParameterError(FlexHawkesError, ValueError):
    """Параметры модели или распределения вне допустимой области"""


class InvalidTrapezoidParameters(InvalidParameterError):
    """Трапециевидно-экспоненциальная плотность некорректна: нужно 0 < p <= 1 и c >= 0"""

    def __init__(self, a: float, ell: float, p: float, c: float):
        self.a = a
        self.ell = ell
        self.p = p
        self.c = c
        super().__init__(
            f"invalid trapezoid parameters: a={a:.6g}, ell={ell:.6g} -> p={p:.6g}, c={c:.6g} "
            f"(требуется 0 < p <= 1 и c >= 0)"
        )


class NoDensityError(FlexHawkesError):
    """У распределения нет плотности в замкнутой форме (эмпирический вариант)"""


class SurvivalUnderflowError(FlexHawkesError, ArithmeticError):
    """1 - F(phi(t)) обнулилось в машинной точности"""

    def __init__(self, t: float, t_max: Optional[float] = None):
        self.t = t
        self.t_max = t_max
        super().__init__(
            f"survival underflow at t={t:.6g}; largest representable t is {t_max:.6g}"
            if t_max is not None
            else f"survival underflow at t={t:.6g}"
        )


class ConvergenceError(FlexHawkesError, ArithmeticError):
    """Численная процедура не сошлась за отведенное число итераций"""


class InputError(FlexHawkesError, ValueError):
    """Некорректные входные данные (времена событий, типы, котировки)"""


class StabilityError(InvalidParameterError):
    """Нарушено условие стационарности (alpha < beta или спектральный радиус < 1)"""


class SingularSystemError(FlexHawkesError, np.linalg.LinAlgError):
    """Вырожденная линейная система"""


class NegativeQuadraticFormError(FlexHawkesError, ArithmeticError):
    """Квадратичная форма u'Mu отрицательна, волатильность не определена"""

    def __init__(self, value: float, matrix: np.ndarray):
        self.value = value
        self.matrix = np.asarray(matrix)
        super().__init__(f"negative quadratic form u'Mu = {value:.6g}; matrix = {self.matrix.tolist()}")
