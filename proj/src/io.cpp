#include "constrex/io.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace constrex::io {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

}  // namespace

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view field) {
    field = trim(field);
    if (!field.empty() && field.front() == '+') field.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw Error(ErrorCode::InvalidInput, "cannot parse number '" + std::string(field) + "'");
    }
    return v;
}

MatrixXd parse_csv_matrix(std::string_view text) {
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<double> row;
        while (true) {
            const auto comma = line.find(',');
            try {
                row.push_back(parse_double(line.substr(0, comma)));
            } catch (const Error& e) {
                throw Error(ErrorCode::InvalidInput, "line " + std::to_string(line_no) + ": " + e.what());
            }
            if (comma == std::string_view::npos) break;
            line.remove_prefix(comma + 1);
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw Error(ErrorCode::DimensionMismatch, "line " + std::to_string(line_no) + " has " +
                                                          std::to_string(row.size()) + " fields, expected " +
                                                          std::to_string(rows.front().size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw Error(ErrorCode::InvalidInput, "CSV contains no data");
    MatrixXd m(Eigen::Index(rows.size()), Eigen::Index(rows.front().size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rows[std::size_t(i)][std::size_t(j)];
    }
    return m;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::InvalidInput, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::InvalidInput, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorCode::InvalidInput, "failed writing " + path.string());
}

MatrixXd read_csv_matrix(const std::filesystem::path& path) {
    try {
        return parse_csv_matrix(read_text(path));
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

VectorXd read_csv_vector(const std::filesystem::path& path) {
    const MatrixXd m = read_csv_matrix(path);
    if (m.cols() == 1) return m.col(0);
    if (m.rows() == 1) return m.row(0).transpose();
    throw Error(ErrorCode::DimensionMismatch, path.string() + ": expected a single row or column");
}

void write_csv_matrix(std::ostream& out, const MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
}

void write_csv_matrix(const std::filesystem::path& path, const MatrixXd& m) {
    std::ostringstream ss;
    write_csv_matrix(ss, m);
    write_text(path, ss.str());
}

void write_csv_vector(const std::filesystem::path& path, const VectorXd& v) { write_csv_matrix(path, MatrixXd(v)); }

CovarianceSpec<double> parse_covariance_spec(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidInput, std::string("covariance JSON: ") + e.what());
    }
    try {
        const std::string variant = j.at("variant").get<std::string>();
        if (variant == "isotropic") return CovarianceSpec<double>::isotropic(j.at("p").get<Eigen::Index>());
        if (variant == "equicorrelated") {
            return CovarianceSpec<double>::equicorrelated(j.at("p").get<Eigen::Index>(), j.at("rho").get<double>());
        }
        if (variant == "explicit") {
            const auto rows = j.at("matrix").get<std::vector<std::vector<double>>>();
            if (rows.empty()) throw Error(ErrorCode::InvalidInput, "explicit covariance matrix is empty");
            MatrixXd m(Eigen::Index(rows.size()), Eigen::Index(rows.front().size()));
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (rows[i].size() != rows.front().size()) {
                    throw Error(ErrorCode::DimensionMismatch, "explicit covariance rows differ in length");
                }
                for (std::size_t k = 0; k < rows[i].size(); ++k) m(Eigen::Index(i), Eigen::Index(k)) = rows[i][k];
            }
            return CovarianceSpec<double>::explicit_matrix(std::move(m));
        }
        throw Error(ErrorCode::InvalidInput, "unknown covariance variant '" + variant + "'");
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidInput, std::string("covariance JSON: ") + e.what());
    }
}

std::string covariance_spec_to_json(const CovarianceSpec<double>& spec) {
    json j;
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Isotropic>) {
                j = {{"variant", "isotropic"}, {"p", v.p}};
            } else if constexpr (std::is_same_v<T, Equicorrelated>) {
                j = {{"variant", "equicorrelated"}, {"p", v.p}, {"rho", v.rho}};
            } else {
                json rows = json::array();
                for (Eigen::Index i = 0; i < v.sigma.rows(); ++i) {
                    std::vector<double> row;
                    for (Eigen::Index k = 0; k < v.sigma.cols(); ++k) row.push_back(v.sigma(i, k));
                    rows.push_back(row);
                }
                j = {{"variant", "explicit"}, {"matrix", rows}};
            }
        },
        spec.variant());
    return j.dump();
}

void write_inference_csv(std::ostream& out, const std::vector<CoordinateInference>& rows) {
    out << "index,estimate,std_error,ci_low,ci_high,p_value,p_adjusted,rejected\n";
    for (const auto& r : rows) {
        out << std::to_string(r.index) << ',' << format_double(r.estimate) << ',' << format_double(r.std_error) << ','
            << format_double(r.ci_low) << ',' << format_double(r.ci_high) << ',' << format_double(r.p_value) << ','
            << format_double(r.p_adjusted) << ',' << (r.rejected ? 1 : 0) << '\n';
    }
}

}  // namespace constrex::io
