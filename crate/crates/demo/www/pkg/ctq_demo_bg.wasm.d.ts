/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_chain_starts: (a: number) => [number, number];
export const demo_leaves_json: (a: number) => [number, number];
export const demo_nearest_user: (a: number, b: number, c: number) => [number, number];
export const demo_new: (a: number, b: number, c: number) => [number, number, number];
export const demo_region: (a: number) => [number, number];
export const demo_trace_json: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const demo_trajectories_json: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
