#ifndef NOF1_PCA_HPP
#define NOF1_PCA_HPP

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <string>
#include <vector>

#include "nof1/autoencoder.hpp"
#include "nof1/common.hpp"

namespace nof1 {

/// Principal components of a centered data matrix, extracted through the
/// SVD of the centered data (better conditioned than forming the covariance
/// at k = 64). Rows of `components` are orthonormal; the sign convention
/// (largest-magnitude loading positive) makes the decomposition unique.
struct PCAModel {
    std::vector<double> mean;                      // length k
    Eigen::MatrixXd components;                    // r x k, orthonormal rows, r <= k
    std::vector<double> eigenvalues;               // descending, >= 0, 1/(n-1) scaling
    std::vector<double> explained_variance_ratio;  // descending, sums to <= 1
    std::string warning;                           // set for degenerate inputs

    std::size_t n_components() const { return static_cast<std::size_t>(components.rows()); }
    std::size_t dim() const { return mean.size(); }
};

namespace detail {

inline Eigen::MatrixXd to_eigen(const EmbeddingMatrix& m) {
    Eigen::MatrixXd X(m.rows, m.cols);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m.at(r, c);
    return X;
}

}  // namespace detail

inline PCAModel pca_fit(const Eigen::MatrixXd& X) {
    const Eigen::Index n = X.rows(), k = X.cols();
    if (n < 2) throw UsageError("pca_fit: need at least 2 rows, got " + std::to_string(n));
    if (!X.allFinite()) throw NumericError("pca_fit: non-finite input");

    PCAModel model;
    const Eigen::RowVectorXd mean = X.colwise().mean();
    model.mean.assign(mean.data(), mean.data() + k);
    const Eigen::MatrixXd centered = X.rowwise() - mean;

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const Eigen::Index r = std::min<Eigen::Index>(n - 1, k);

    double total_var = 0.0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) total_var += sv(i) * sv(i);
    total_var /= static_cast<double>(n - 1);

    model.components = svd.matrixV().leftCols(r).transpose();
    model.eigenvalues.resize(static_cast<std::size_t>(r));
    model.explained_variance_ratio.resize(static_cast<std::size_t>(r));
    for (Eigen::Index i = 0; i < r; ++i) {
        double ev = sv(i) * sv(i) / static_cast<double>(n - 1);
        if (ev < 0) ev = 0;  // clamp fp dust
        model.eigenvalues[static_cast<std::size_t>(i)] = ev;
        model.explained_variance_ratio[static_cast<std::size_t>(i)] = total_var > 0 ? ev / total_var : 0.0;
    }

    if (total_var <= 1e-300) {
        // zero-variance data: components by convention (coordinate axes)
        model.components = Eigen::MatrixXd::Identity(r, k);
        model.warning = "pca_fit: input has zero variance; components set by convention";
    }

    // sign convention: each component's largest-magnitude coordinate positive
    for (Eigen::Index i = 0; i < model.components.rows(); ++i) {
        Eigen::Index imax = 0;
        model.components.row(i).cwiseAbs().maxCoeff(&imax);
        if (model.components(i, imax) < 0) model.components.row(i) = -model.components.row(i);
    }
    return model;
}

inline PCAModel pca_fit(const EmbeddingMatrix& m) { return pca_fit(detail::to_eigen(m)); }

/// scores = (X - mean) * components^T, shape n x r.
inline Eigen::MatrixXd pca_transform(const PCAModel& model, const Eigen::MatrixXd& X) {
    if (static_cast<std::size_t>(X.cols()) != model.dim())
        throw UsageError("pca_transform: X has " + std::to_string(X.cols()) + " columns, model expects " +
                         std::to_string(model.dim()));
    Eigen::RowVectorXd mean(model.dim());
    for (std::size_t i = 0; i < model.dim(); ++i) mean(static_cast<Eigen::Index>(i)) = model.mean[i];
    return (X.rowwise() - mean) * model.components.transpose();
}

inline Eigen::MatrixXd pca_transform(const PCAModel& model, const EmbeddingMatrix& m) {
    return pca_transform(model, detail::to_eigen(m));
}

/// Column 0 of the transform: the univariate outcome series.
inline std::vector<double> first_component_scores(const PCAModel& model, const Eigen::MatrixXd& X) {
    const Eigen::MatrixXd scores = pca_transform(model, X);
    std::vector<double> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) out[static_cast<std::size_t>(i)] = scores(i, 0);
    return out;
}

inline std::vector<double> first_component_scores(const PCAModel& model, const EmbeddingMatrix& m) {
    return first_component_scores(model, detail::to_eigen(m));
}

}  // namespace nof1

#endif
