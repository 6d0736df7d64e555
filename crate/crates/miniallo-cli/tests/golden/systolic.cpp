// generated by miniallo 0.1.0
// schedule: b0f304084582739a
#include <cstdint>
#include "ap_fixed.h"
#include "ap_int.h"
#include "hls_stream.h"

void systolic_0_0(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[0][0] += (A_v * B_v);
  }
}

void systolic_0_1(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[0][1] += (A_v * B_v);
  }
}

void systolic_0_2(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[0][2] += (A_v * B_v);
  }
}

void systolic_0_3(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[0][3] += (A_v * B_v);
  }
}

void systolic_1_0(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[1][0] += (A_v * B_v);
  }
}

void systolic_1_1(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[1][1] += (A_v * B_v);
  }
}

void systolic_1_2(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[1][2] += (A_v * B_v);
  }
}

void systolic_1_3(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[1][3] += (A_v * B_v);
  }
}

void systolic_2_0(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[2][0] += (A_v * B_v);
  }
}

void systolic_2_1(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[2][1] += (A_v * B_v);
  }
}

void systolic_2_2(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[2][2] += (A_v * B_v);
  }
}

void systolic_2_3(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[2][3] += (A_v * B_v);
  }
}

void systolic_3_0(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[3][0] += (A_v * B_v);
  }
}

void systolic_3_1(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[3][1] += (A_v * B_v);
  }
}

void systolic_3_2(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[3][2] += (A_v * B_v);
  }
}

void systolic_3_3(int16_t C[4][4], hls::stream<int8_t> &A_in, hls::stream<int8_t> &A_out, hls::stream<int8_t> &B_in, hls::stream<int8_t> &B_out) {
#pragma HLS stream variable=A_in depth=5
#pragma HLS stream variable=A_out depth=5
#pragma HLS stream variable=B_in depth=5
#pragma HLS stream variable=B_out depth=5
  int8_t A_v;
  int8_t B_v;
  k: for (int k = 0; k < 4; k++) {
    A_v = A_in.read();
    A_out.write(A_v);
    B_v = B_in.read();
    B_out.write(B_v);
    C[3][3] += (A_v * B_v);
  }
}

void systolic(int8_t A[4][4], int8_t B[4][4], int16_t C[4][4]) {
#pragma HLS dataflow
  hls::stream<int8_t> A_fifo[4][5];
  int8_t A_drain[4];
  hls::stream<int8_t> B_fifo[4][5];
  int8_t B_drain[4];
#pragma HLS stream variable=A_fifo depth=5
#pragma HLS stream variable=B_fifo depth=5
  A_load_k: for (int A_load_k = 0; A_load_k < 4; A_load_k++) {
    A_load_i: for (int A_load_i = 0; A_load_i < 4; A_load_i++) {
      A_fifo[A_load_i][0].write(A[A_load_i][A_load_k]);
    }
  }
  B_load_k: for (int B_load_k = 0; B_load_k < 4; B_load_k++) {
    B_load_j: for (int B_load_j = 0; B_load_j < 4; B_load_j++) {
      B_fifo[B_load_j][0].write(B[B_load_k][B_load_j]);
    }
  }
  systolic_0_0(C, A_fifo[0][0], A_fifo[0][1], B_fifo[0][0], B_fifo[0][1]);
  systolic_0_1(C, A_fifo[0][1], A_fifo[0][2], B_fifo[1][0], B_fifo[1][1]);
  systolic_0_2(C, A_fifo[0][2], A_fifo[0][3], B_fifo[2][0], B_fifo[2][1]);
  systolic_0_3(C, A_fifo[0][3], A_fifo[0][4], B_fifo[3][0], B_fifo[3][1]);
  systolic_1_0(C, A_fifo[1][0], A_fifo[1][1], B_fifo[0][1], B_fifo[0][2]);
  systolic_1_1(C, A_fifo[1][1], A_fifo[1][2], B_fifo[1][1], B_fifo[1][2]);
  systolic_1_2(C, A_fifo[1][2], A_fifo[1][3], B_fifo[2][1], B_fifo[2][2]);
  systolic_1_3(C, A_fifo[1][3], A_fifo[1][4], B_fifo[3][1], B_fifo[3][2]);
  systolic_2_0(C, A_fifo[2][0], A_fifo[2][1], B_fifo[0][2], B_fifo[0][3]);
  systolic_2_1(C, A_fifo[2][1], A_fifo[2][2], B_fifo[1][2], B_fifo[1][3]);
  systolic_2_2(C, A_fifo[2][2], A_fifo[2][3], B_fifo[2][2], B_fifo[2][3]);
  systolic_2_3(C, A_fifo[2][3], A_fifo[2][4], B_fifo[3][2], B_fifo[3][3]);
  systolic_3_0(C, A_fifo[3][0], A_fifo[3][1], B_fifo[0][3], B_fifo[0][4]);
  systolic_3_1(C, A_fifo[3][1], A_fifo[3][2], B_fifo[1][3], B_fifo[1][4]);
  systolic_3_2(C, A_fifo[3][2], A_fifo[3][3], B_fifo[2][3], B_fifo[2][4]);
  systolic_3_3(C, A_fifo[3][3], A_fifo[3][4], B_fifo[3][3], B_fifo[3][4]);
  B_drain_j: for (int B_drain_j = 0; B_drain_j < 4; B_drain_j++) {
    B_drain_k: for (int B_drain_k = 0; B_drain_k < 4; B_drain_k++) {
      B_drain[B_drain_j] = B_fifo[B_drain_j][4].read();
    }
  }
  A_drain_i: for (int A_drain_i = 0; A_drain_i < 4; A_drain_i++) {
    A_drain_k: for (int A_drain_k = 0; A_drain_k < 4; A_drain_k++) {
      A_drain[A_drain_i] = A_fifo[A_drain_i][4].read();
    }
  }
}
