/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const cascade_demo: (a: number, b: number, c: bigint) => [number, number, number, number];
export const segment_demo: (a: number, b: number, c: bigint) => [number, number, number, number];
export const speed_histogram_demo: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
