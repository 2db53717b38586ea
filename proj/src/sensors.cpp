#include "ssego/sensors.hpp"

#include "ssego/errors.hpp"

namespace ssego {

void check_monotone(const std::vector<double>& times, const std::string& stream) {
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw NonMonotoneTimestamps(stream, i);
  }
}

}  // namespace ssego
