// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ssar/kernels.hpp"

namespace ssar::kernels::detail {

template <class T>
Table<T> make_scalar_table();

#if SSAR_HAVE_AVX2
template <class T>
Table<T> make_avx2_table();
#endif

}  // namespace ssar::kernels::detail
