#include <Eigen/Core>

#include "evidseg/kernels.hpp"

namespace evidseg::kernels {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_sizes(const ConvShape& s, std::span<const double> input,
                 std::span<const double> weights, std::span<const double> bias,
                 std::span<double> output) {
  if (s.out_height() < 1 || s.out_width() < 1) throw std::invalid_argument("kernel larger than input");
  const std::size_t oh = s.out_height(), ow = s.out_width();
  if (input.size() != static_cast<std::size_t>(s.channels) * s.height * s.width ||
      weights.size() != static_cast<std::size_t>(s.filters) * s.channels * s.kernel * s.kernel ||
      bias.size() != static_cast<std::size_t>(s.filters) ||
      output.size() != static_cast<std::size_t>(s.filters) * oh * ow)
    throw std::invalid_argument("conv2d buffer sizes do not match shape");
}

}  // namespace

void im2col(const ConvShape& s, std::span<const double> input, std::span<double> cols) {
  const int oh = s.out_height(), ow = s.out_width(), k = s.kernel;
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < s.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* dst = cols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        for (int y = 0; y < oh; ++y) {
          const double* src =
              input.data() + (static_cast<std::size_t>(c) * s.height + y + ky) * s.width + kx;
          std::copy(src, src + ow, dst + static_cast<std::size_t>(y) * ow);
        }
      }
}

void col2im_add(const ConvShape& s, std::span<const double> cols, std::span<double> input_grad) {
  const int oh = s.out_height(), ow = s.out_width(), k = s.kernel;
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < s.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* src = cols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        for (int y = 0; y < oh; ++y) {
          double* dst =
              input_grad.data() + (static_cast<std::size_t>(c) * s.height + y + ky) * s.width + kx;
          const double* row = src + static_cast<std::size_t>(y) * ow;
          for (int x = 0; x < ow; ++x) dst[x] += row[x];
        }
      }
}

void conv2d_forward_reference(const ConvShape& s, std::span<const double> input,
                              std::span<const double> weights, std::span<const double> bias,
                              std::span<double> output) {
  check_sizes(s, input, weights, bias, output);
  const int oh = s.out_height(), ow = s.out_width(), k = s.kernel;
  for (int f = 0; f < s.filters; ++f) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = bias[f];
        for (int c = 0; c < s.channels; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx)
              acc += weights[((static_cast<std::size_t>(f) * s.channels + c) * k + ky) * k + kx] *
                     input[(static_cast<std::size_t>(c) * s.height + y + ky) * s.width + x + kx];
        output[(static_cast<std::size_t>(f) * oh + y) * ow + x] = acc;
      }
    }
  }
}

void conv2d_forward(const ConvShape& s, std::span<const double> input,
                    std::span<const double> weights, std::span<const double> bias,
                    std::span<double> output) {
  check_sizes(s, input, weights, bias, output);
  const int rows = s.channels * s.kernel * s.kernel;
  const int plane = s.out_height() * s.out_width();
  RowMatrix cols(rows, plane);
  im2col(s, input, std::span<double>(cols.data(), cols.size()));
  Eigen::Map<const RowMatrix> w(weights.data(), s.filters, rows);
  Eigen::Map<RowMatrix> out(output.data(), s.filters, plane);
  out.noalias() = w * cols;
  for (int f = 0; f < s.filters; ++f) out.row(f).array() += bias[f];
}

}  // namespace evidseg::kernels
