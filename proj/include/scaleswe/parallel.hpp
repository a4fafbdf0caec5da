// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace scaleswe
{

/// Calls `fn(i)` for every i in [0, count) on up to `workers` threads.
/// Every index runs even if some throw; the lowest-index exception is
/// rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn)
{
    if (count == 0)
        return;
    auto const threads = static_cast<std::size_t>(std::clamp<long>(workers, 1, static_cast<long>(count)));
    auto next = std::atomic<std::size_t> {0};
    auto mutex = std::mutex {};
    auto first_error = std::exception_ptr {};
    auto first_index = count;

    auto work = [&] {
        while (true)
        {
            auto const i = next.fetch_add(1);
            if (i >= count)
                return;
            try
            {
                fn(i);
            }
            catch (...)
            {
                auto lock = std::scoped_lock(mutex);
                if (i < first_index)
                {
                    first_index = i;
                    first_error = std::current_exception();
                }
            }
        }
    };

    if (threads == 1)
    {
        work();
    }
    else
    {
        auto pool = std::vector<std::jthread> {};
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back(work);
    }
    if (first_error)
        std::rethrow_exception(first_error);
}

} // namespace scaleswe
