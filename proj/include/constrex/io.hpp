#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "constrex/inference.hpp"
#include "constrex/linalg.hpp"
#include "constrex/model.hpp"

namespace constrex::io {

/// Shortest decimal string that reads back to the same double; independent of the C locale.
std::string format_double(double v);
/// Strict locale-independent parse of a whole field.
double parse_double(std::string_view field);

/// Comma-separated matrix without a header. Blank lines are ignored; all rows must have the same width.
MatrixXd parse_csv_matrix(std::string_view text);
MatrixXd read_csv_matrix(const std::filesystem::path& path);
/// A single column or a single row read as a vector.
VectorXd read_csv_vector(const std::filesystem::path& path);

void write_csv_matrix(std::ostream& out, const MatrixXd& m);
void write_csv_matrix(const std::filesystem::path& path, const MatrixXd& m);
void write_csv_vector(const std::filesystem::path& path, const VectorXd& v);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

/// {"variant":"isotropic","p":10}, {"variant":"equicorrelated","p":100,"rho":0.5} or
/// {"variant":"explicit","matrix":[[...],...]}.
CovarianceSpec<double> parse_covariance_spec(std::string_view json_text);
std::string covariance_spec_to_json(const CovarianceSpec<double>& spec);

/// Header: index,estimate,std_error,ci_low,ci_high,p_value,p_adjusted,rejected
void write_inference_csv(std::ostream& out, const std::vector<CoordinateInference>& rows);

}  // namespace constrex::io
