//! Small canonical programs used by tests and the documentation.

/// Squares one array into another under a data region.
pub const SQUARE: &str = "\
int N;
double x[N];
double y[N];
#pragma acc data copyout(x[0:N]) present(y)
#pragma acc parallel loop
for (int i = 0; i < N; i++) x[i] = y[i] * y[i];
";

/// Five-statement write chain whose accesses depend on each other
/// through arrays `a` and `b` at two index positions.  The scalar `x`
/// is read at the top of the body and reassigned below, so its value
/// carries across iterations under sequential semantics.
pub const CHAIN_FIVE: &str = "\
int N;
double a[N];
double b[N];
double c[N];
double x;
int k;
int j;
x = 0.0;
k = 2;
j = 1;
#pragma acc data copyin(c[0:N]) copyout(a[0:N], b[0:N])
#pragma acc parallel loop gang
for (int i = 0; i < N; i++) {
  a[i] = x;
  b[i] = a[i];
  x = c[j];
  a[k] = x;
  b[k] = a[k];
}
";

/// Six-dimensional block solver update: two sequential block loops
/// inside a gang/worker nest, reads offset along the plane dimension.
pub const BLOCK_SOLVER_6D: &str = "\
int gp02;
int gp22;
int jsize;
int AA;
int BB;
int CC;
int J;
double lhsY[5][5][3][J][10][10];
#pragma acc data copyin(lhsY) copyout(lhsY)
#pragma acc parallel loop gang
for (int i = 1; i <= gp02; i++) {
  #pragma acc loop worker vector
  for (int k = 1; k <= gp22; k++) {
    for (int m = 0; m < 5; m++) {
      for (int n = 0; n < 5; n++) {
        lhsY[n][m][BB][jsize][i][k] = lhsY[n][m][BB][jsize][i][k] - lhsY[n][0][AA][jsize][i][k] * lhsY[0][m][CC][jsize - 1][i][k] - lhsY[n][4][AA][jsize][i][k] * lhsY[4][m][CC][jsize - 1][i][k];
      }
    }
  }
}
";

/// Nineteen-point star stencil over a double-buffered 3D grid.  Every
/// cell is written; boundary cells copy through unchanged.
pub const STENCIL_19PT: &str = "\
int NI;
int NJ;
int NK;
double p[NI][NJ][NK];
double wrk[NI][NJ][NK];
#pragma acc data copyin(p) copyout(wrk)
#pragma acc parallel loop gang
for (int i = 0; i < NI; i++) {
  #pragma acc loop worker
  for (int j = 0; j < NJ; j++) {
    #pragma acc loop vector
    for (int k = 0; k < NK; k++) {
      wrk[i][j][k] = (i >= 1 && i <= NI - 2 && j >= 1 && j <= NJ - 2 && k >= 1 && k <= NK - 2) ? 0.25 * p[i][j][k] + 0.125 * (p[i - 1][j][k] + p[i + 1][j][k] + p[i][j - 1][k] + p[i][j + 1][k] + p[i][j][k - 1] + p[i][j][k + 1]) + 0.0625 * (p[i - 1][j - 1][k] + p[i - 1][j + 1][k] + p[i + 1][j - 1][k] + p[i + 1][j + 1][k] + p[i - 1][j][k - 1] + p[i - 1][j][k + 1] + p[i + 1][j][k - 1] + p[i + 1][j][k + 1] + p[i][j - 1][k - 1] + p[i][j - 1][k + 1] + p[i][j + 1][k - 1] + p[i][j + 1][k + 1]) : p[i][j][k];
    }
  }
}
";

/// Dot-product reduction exported to the host.
pub const DOT_REDUCTION: &str = "\
int N;
double a[N];
double b[N];
double sum;
sum = 0.0;
#pragma acc data copyin(a[0:N], b[0:N])
#pragma acc parallel loop gang reduction(+:sum)
for (int i = 0; i < N; i++) sum += a[i] * b[i];
";

/// Histogram via atomic updates through an index array.
pub const ATOMIC_HISTOGRAM: &str = "\
int N;
int M;
int col[N];
int hist[M];
for (int i = 0; i < M; i++) hist[i] = 0;
for (int i = 0; i < N; i++) col[i] = i * 7 % M;
#pragma acc data copyin(col[0:N], hist[0:M]) copyout(hist[0:M])
#pragma acc parallel loop gang
for (int j = 0; j < N; j++) {
  #pragma acc atomic
  hist[col[j]] += 1;
}
";
