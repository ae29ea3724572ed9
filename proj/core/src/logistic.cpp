#include <cmath>

#include "aminn/error.hpp"
#include "aminn/trainer.hpp"

namespace aminn {

double LogisticModel::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    const double z = row.dot(weights) + bias;
    return 1.0 / (1.0 + std::exp(-z));
}

LogisticModel fit_logistic(const Eigen::MatrixXd& rows, std::span<const int> labels,
                           const LogisticOptions& options) {
    const Eigen::Index n = rows.rows();
    if (n == 0 || static_cast<std::size_t>(n) != labels.size()) {
        throw InputError("fit_logistic: rows and labels differ in length");
    }
    if (options.l2 < 0.0 || options.iterations < 1) throw InputError("fit_logistic: invalid options");
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = labels[static_cast<std::size_t>(i)];

    // Gradient of the mean log-loss is Lipschitz with constant at most
    // 0.25 * lambda_max([X 1]^T [X 1] / n) <= 0.25 * (trace(X^T X)/n + 1).
    const double lipschitz = 0.25 * (rows.squaredNorm() / static_cast<double>(n) + 1.0) + options.l2;
    const double step = 1.0 / lipschitz;

    LogisticModel m;
    m.weights = Eigen::VectorXd::Zero(rows.cols());
    for (int it = 0; it < options.iterations; ++it) {
        const Eigen::VectorXd z = (rows * m.weights).array() + m.bias;
        const Eigen::VectorXd p = (1.0 + (-z.array()).exp()).inverse().matrix();
        const Eigen::VectorXd r = (p - y) / static_cast<double>(n);
        const Eigen::VectorXd gw = rows.transpose() * r + options.l2 * m.weights;
        const double gb = r.sum();
        m.weights -= step * gw;
        m.bias -= step * gb;
    }
    if (!m.weights.allFinite() || !std::isfinite(m.bias)) throw NumericError("fit_logistic: diverged");
    return m;
}

}  // namespace aminn
